use thiserror::Error;

/// Errors raised by the certification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed network file: {0}")]
    Format(String),

    #[error("union of {boxes} boxes exceeds the exact inclusion-exclusion cap of {cap}; use the Monte-Carlo estimator instead")]
    ExactCapExceeded { boxes: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(what: impl Into<String>, expected: usize, got: usize) -> Error {
    Error::Dimension {
        what: what.into(),
        expected,
        got,
    }
}
