//! Experiment runner for the `sdgl` library: synthesize or load cells, train
//! the model and its comparison methods, and write CSV, checkpoint and SVG
//! artifacts.

pub mod config;
pub mod plot;
pub mod run;
pub mod synth;
pub mod table;

pub use config::{ExperimentConfig, OUTPUT_DIR_ENV};

/// Failure of a subcommand, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Training(_) => 2,
            _ => 1,
        }
    }
}
