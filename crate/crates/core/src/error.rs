use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index out of range: {what} = {index} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("policy iteration did not converge within {0} iterations")]
    PolicyIterationCap(u64),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite {what} at sample {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("training diverged at epoch {epoch}: residual {residual} exceeds {limit}")]
    Diverged {
        epoch: usize,
        residual: f64,
        limit: f64,
    },

    #[error("dataset fingerprint {found} does not match game fingerprint {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
