//! Batch runner for the jdpd simulator: TOML experiment configs in,
//! datasets and a JSON manifest out.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{Experiment, ExperimentConfig, Preset};
pub use error::CliError;
pub use experiments::{run, RunReport, RunRequest, OUT_DIR_ENV};
