//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Error variants shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying I/O failure, annotated with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A line in an input file did not match the expected record shape.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Two artifacts that must agree (dataset/viewset, checkpoint/vocab) do not.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// An argument violated an operation's preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A name or id could not be resolved.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// Configuration file, environment override, or flag could not be applied.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite values appeared where finite ones are required.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
