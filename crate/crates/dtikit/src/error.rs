//! Shared error type for the whole crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Filesystem failure while reading or writing an artifact.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents do not match the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// An input violates a documented invariant or precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A numeric failure at runtime (divergence, non-finite intermediate).
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code convention: 2 for usage/validation problems,
    /// 3 for runtime/numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_) | Error::Validation(_) => 2,
            Error::Io { .. } | Error::Numeric(_) => 3,
        }
    }
}
