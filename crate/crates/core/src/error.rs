use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index {index} out of range for {what} of size {size}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric abort: {0}")]
    NumericAbort(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Dimension {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
