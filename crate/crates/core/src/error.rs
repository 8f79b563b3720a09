use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument does not hold.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The input is well-formed but numerically degenerate (zero denominator,
    /// constant trace, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Not enough data to fit a model.
    #[error("fit error: {0}")]
    Fit(String),

    /// A request exceeds a fixed resource limit.
    #[error("resource limit: {0}")]
    Resource(String),

    /// An on-disk file does not match its manifest or the expected layout.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn degenerate(msg: impl Into<String>) -> Error {
    Error::Degenerate(msg.into())
}
