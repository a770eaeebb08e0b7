use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Internal(String),
    #[error(transparent)]
    Core(#[from] jdpd_core::Error),
}

impl CliError {
    /// One of config | numerics | calibration | io.
    pub fn category(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Io(_) => "io",
            Self::Internal(_) => "numerics",
            Self::Core(e) => e.category(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "numerics" => 3,
            "calibration" => 4,
            _ => 5,
        }
    }
}
