use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented invariant or precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Annotation JSON did not match the schema; `path` locates the offending field.
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("value out of range: {0}")]
    Range(String),

    /// Invalid or contradictory configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("png error in {path}: {message}")]
    Png { path: PathBuf, message: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
