use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the distinct failure classes surfaced by the CLI:
/// configuration problems, IO/schema problems, and numerical divergence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    /// An API was driven outside its documented contract, e.g. replaying a
    /// forward trace against a model it was not produced by.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Non-finite loss or gradients during training. Surfaced, never clamped.
    #[error("training divergence: {0}")]
    Divergence(String),

    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
