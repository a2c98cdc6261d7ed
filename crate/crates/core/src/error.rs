use std::io;

/// Errors produced by the encoders, indexes, window and harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("snapshot load failed: {0}")]
    Load(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}
