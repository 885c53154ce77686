//! Command-line front end: live measurement, the receiver daemon, simulator
//! experiments, offline re-analysis of recorded samples and plot-ready
//! reports.

pub mod args;
pub mod commands;
pub mod output;
pub mod report;
pub mod samples;
pub mod simulate;

use std::io;

use diettopp::{AnalysisError, EstimationError, TransportError};
use thiserror::Error;

pub use args::Cli;
pub use commands::run;

/// The estimate converged.
pub const EXIT_CONVERGED: i32 = 0;
/// Hard error: bad input, I/O, network.
pub const EXIT_ERROR: i32 = 1;
/// The estimator ran but could not produce a converged estimate.
pub const EXIT_SOFT_FAILURE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        match e {
            EstimationError::Analysis(e) => CliError::Analysis(e),
            EstimationError::Transport(e) => CliError::Transport(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Analysis(AnalysisError::InvalidConfig(_)) => EXIT_ERROR,
            CliError::Analysis(_) => EXIT_SOFT_FAILURE,
            _ => EXIT_ERROR,
        }
    }
}

/// Sets up logging from `DIETTOPP_LOG` (error, warn, info, debug, trace);
/// `--verbose` forces debug.
pub fn init_logging(verbose: bool) {
    let mut builder =
        env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIETTOPP_LOG", "warn"));
    if verbose {
        builder.filter_level(log::LevelFilter::Debug);
    }
    let _ = builder.try_init();
}
