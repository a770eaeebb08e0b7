use thiserror::Error;

/// Failure categories surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Physically meaningless input (negative inductance, empty grid, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent configuration (bad schedule timing, wrong mode, ...).
    #[error("config error: {0}")]
    Config(String),
    /// The integration could not be trusted (trace drift, positivity loss).
    #[error("numerics error: {0}")]
    Numerics(String),
    /// A calibration search did not find its target.
    #[error("calibration error: {0}")]
    Calibration(String),
    /// Shapes of two objects do not match.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// A requested sample lies outside the defined range.
    #[error("out of range: {0}")]
    OutOfRange(String),
    /// A numerical routine that should always succeed did not.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Coarse category used for exit codes and reports.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) | Error::Config(_) | Error::DimensionMismatch { .. } | Error::OutOfRange(_) => {
                "config"
            }
            Error::Numerics(_) | Error::Internal(_) => "numerics",
            Error::Calibration(_) => "calibration",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
