//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an input value or data structure was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The data does not support a position estimate (no detections,
    /// too few usable receivers, ...). Maps to exit code 1 in the CLI.
    #[error("estimation impossible: {0}")]
    EstimationImpossible(String),

    /// A linear system arising in an estimator could not be solved.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// A log file row or header could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn impossible(msg: impl Into<String>) -> Self {
        Error::EstimationImpossible(msg.into())
    }
}
