//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/mask shapes do not line up for an operation.
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    /// A precondition on an argument was violated.
    #[error("{0}")]
    InvalidArgument(String),

    /// Filesystem failure, annotated with the offending path.
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Image decode/encode failure, annotated with the offending path.
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// Config file problem; `line` is 1-based.
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    /// Dataset layout or content problem.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A training run had to abort.
    #[error("training aborted at iteration {iter}: {message}")]
    Training { iter: usize, message: String },

    /// Checkpoint file is malformed or does not match expectations.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            details: details.into(),
        }
    }

    pub(crate) fn arg(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
