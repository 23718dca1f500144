//! Error classes of a run and their exit codes.

use std::process::ExitCode;

use thiserror::Error;

/// Failure of a run, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid configuration, or unusable output directory.
    #[error("configuration error: {0}")]
    Config(String),
    /// A pricer or simulator failed; details are in the diagnostics file.
    #[error("solver failure: {0}")]
    Solver(String),
    /// The run completed but a statistical check could not be decided.
    #[error("inconclusive: {0}")]
    Inconclusive(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Inconclusive(_) => 4,
        })
    }
}

impl From<fwdprice::Error> for CliError {
    fn from(e: fwdprice::Error) -> Self {
        if e.is_input_error() {
            CliError::Config(e.to_string())
        } else {
            CliError::Solver(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Solver(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Solver(format!("json: {e}"))
    }
}
