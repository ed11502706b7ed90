//! Orchestration behind the `csikit` binary: dataset generation, model
//! training, evaluation sweeps and overhead/FLOP reports.

pub mod commands;
pub mod config;

pub use commands::{
    data_path, generate, model_path, report, results_path, summary_table, sweep, trace_path, train, ReportRow,
    TrainSummary,
};
pub use config::{ExperimentConfig, PointConfig, DEFAULT_PROFILE};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] csikit::Error),
}

impl CliError {
    /// 1 for usage and config problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Run(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
