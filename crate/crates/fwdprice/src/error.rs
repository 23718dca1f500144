//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenient result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the pricing, filtering and simulation routines.
///
/// Variants are grouped by the caller's likely reaction: argument and
/// configuration problems are fixed by changing inputs, solver failures
/// carry enough text to locate the offending step, and statistical
/// degeneracies signal that the data cannot support the requested estimate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A point lies outside the domain of a function (e.g. negative wealth
    /// for a power utility).
    #[error("domain error: {0}")]
    Domain(String),

    /// A finite-difference stencil would leave the domain of the function.
    #[error("stencil error: {0}")]
    Stencil(String),

    /// The data carry no information for the requested estimator
    /// (e.g. zero realized variance).
    #[error("estimation degenerate: {0}")]
    EstimationDegenerate(String),

    /// The parameter combination lies outside the regime covered by the
    /// closed-form formulas.
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    /// A numerical scheme failed to converge or produced non-finite values.
    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// An expectation that must be finite diverges (e.g. an exponential
    /// moment of an unbounded payoff).
    #[error("divergence: {0}")]
    Divergence(String),

    /// An exercise boundary cannot be defined for the given payoff.
    #[error("boundary undefined: {0}")]
    BoundaryUndefined(String),

    /// A configuration value is unusable (e.g. a penalty parameter that
    /// overflows the linear system).
    #[error("configuration error: {0}")]
    Config(String),

    /// Failure while writing an artifact.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Failure while serialising CSV output.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Failure while serialising JSON output.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from bad inputs rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Domain(_)
                | Error::UnsupportedRegime(_)
                | Error::Config(_)
                | Error::BoundaryUndefined(_)
        )
    }
}

/// Returns `InvalidArgument` with `msg` unless `cond` holds.
pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg()))
    }
}
