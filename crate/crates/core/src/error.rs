//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called with inputs that violate its preconditions.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A record in a dataset or config file could not be parsed.
    #[error("parse error in field `{field}`: {reason}")]
    Parse { field: String, reason: String },

    /// A state space or graph is too large for an exhaustive routine.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Numerical breakdown (NaN/inf loss, divergent fine-tuning, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
