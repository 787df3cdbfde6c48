use thiserror::Error;

/// Errors raised by the estimators, tests and I/O helpers.
#[derive(Debug, Error)]
pub enum DcovError {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("sample too small: need at least {needed} observations, got {found}")]
    SampleTooSmall { needed: usize, found: usize },

    /// A NaN or infinite value was found in an input block.
    #[error("non-finite value in {block} block at row {row}")]
    NonFinite { block: &'static str, row: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown {kind} `{tag}`")]
    UnknownTag { kind: &'static str, tag: String },

    #[error("CSV error at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DcovError>;
