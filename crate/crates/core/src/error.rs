//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied data violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numeric operation produced a non-finite value or failed to factor.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The ODE integrator could not advance past `last_good_time`.
    #[error("integration failed at t = {last_good_time}{}: {reason}",
        trajectory.map(|m| format!(" (trajectory {m})")).unwrap_or_default())]
    IntegrationFailure {
        last_good_time: f64,
        trajectory: Option<usize>,
        reason: String,
    },

    /// Raw-data ingestion failed at a specific frame.
    #[error("ingestion error at frame {frame}: {reason}")]
    Ingestion { frame: usize, reason: String },

    /// A problem size exceeds the configured dense-algebra cap.
    #[error("problem size {size} exceeds cap {cap}")]
    Resource { size: usize, cap: usize },

    /// The optimizer never produced a finite objective value.
    #[error("optimization failed: {0}")]
    Optimization(String),

    /// A cached quantity does not belong to the supplied inputs.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A relative error is requested against a zero-norm reference.
    #[error("undefined relative error: reference norm is zero")]
    UndefinedRelativeError,

    /// Parse or serialization failure.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("{e} (line {}, column {})", e.line(), e.column()))
    }
}
