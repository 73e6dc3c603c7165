use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("path error: {path}: {reason}")]
    Path { path: PathBuf, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("decode error in {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("decomposition error: {0}")]
    Decomposition(String),

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown class label: {0}")]
    Roster(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure classes, used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Bounds(_) => ErrorKind::Config,
            Error::Numeric(_) | Error::Decomposition(_) => ErrorKind::Numeric,
            Error::Path { .. }
            | Error::Format(_)
            | Error::Decode { .. }
            | Error::Capacity(_)
            | Error::Roster(_)
            | Error::Io { .. } => ErrorKind::Data,
        }
    }
}
