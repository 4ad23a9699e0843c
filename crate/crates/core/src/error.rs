//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide error enum. Variants map onto the CLI exit-code contract:
/// usage/configuration problems, bad data, and I/O failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The caller asked for something inconsistent with a config or network
    /// definition (bad shapes at build time, mode/dataset conflicts, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was used outside its contract (shape mismatch at run time,
    /// backward on a non-scalar, out-of-range epoch, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// The data itself is unusable (empty masks, empty test sets, mismatched
    /// volume dims, degenerate fits).
    #[error("data error: {0}")]
    Data(String),

    /// Filesystem or format-level failure, with the offending path.
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io { path: path.into(), message: err.to_string() }
    }

    /// Process exit code for this error class: 2 usage, 3 data, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Data(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
