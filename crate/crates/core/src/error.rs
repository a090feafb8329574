//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by any operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A file or byte stream did not match the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// The input uses an encoding or variant this crate does not handle.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A computation produced NaN/Inf or otherwise left the valid domain.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A metric has no defined value for the given signals.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Experiment plan fails its structural invariants.
    #[error("plan validation: {0}")]
    PlanValidation(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
