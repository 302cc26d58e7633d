//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by graph maintenance, propagation, and training.
#[derive(Debug, Error)]
pub enum CodenError {
    #[error("node id {id} out of range (node count {n})")]
    NodeOutOfRange { id: usize, n: usize },

    #[error("dimension {dim} out of range (feature count {f})")]
    DimOutOfRange { dim: usize, f: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inconsistent input: {0}")]
    InconsistentInput(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CodenError>;

impl CodenError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CodenError::Io {
            path: path.into(),
            source,
        }
    }
}
