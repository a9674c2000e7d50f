use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Load {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("dialogue record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("provider error (prompt {prompt_hash}): {message}")]
    Provider {
        prompt_hash: String,
        message: String,
    },
    #[error("embedding provider error: {0}")]
    Embedding(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training failed at epoch {epoch}, batch {batch}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("cannot access {path}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
