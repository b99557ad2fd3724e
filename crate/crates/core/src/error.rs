use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("invalid body asset: {0}")]
    InvalidAsset(String),

    #[error("UV collision: samples {first} and {second} both map to pixel ({row}, {col})")]
    UvCollision { first: usize, second: usize, row: usize, col: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    CheckpointVersion { expected: u32, found: u32 },

    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
