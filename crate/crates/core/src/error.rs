use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: unknown {kind} `{key}`")]
    Vocabulary {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        key: String,
    },

    #[error("{path}:{line}: duplicate metadata for entity `{key}`")]
    DuplicateMetadata {
        path: PathBuf,
        line: usize,
        key: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("{0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("sampling error: {0}")]
    Sampling(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
