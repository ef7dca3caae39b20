//! Command-line front end of the regularity lab: JSON experiment configs,
//! the built-in problem library, and CSV/JSON outputs.

pub mod config;
pub mod records;
pub mod runner;

use thiserror::Error;

pub use config::{Experiment, ExperimentConfig, GridSpec};
pub use runner::{run, Report, RunOutput};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown problem id {0:?}; known ids: {known}", known = known_ids())]
    UnknownProblem(String),
    #[error("experiment {experiment} is not available for module {module}")]
    Unsupported { experiment: String, module: String },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("records error: {0}")]
    Records(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl CliError {
    /// Process exit code: 3 for solver failures, 2 for everything the
    /// caller can fix (config, records, fit inputs, paths).
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Solver(_) => 3,
            _ => 2,
        }
    }
}

pub fn known_ids() -> String {
    reglab::problems::REGISTRY
        .iter()
        .map(|(id, _, _)| *id)
        .collect::<Vec<_>>()
        .join(", ")
}
