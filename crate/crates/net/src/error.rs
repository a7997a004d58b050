use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Core(#[from] mbhr_core::Error),
    #[error("torch: {0}")]
    Torch(#[from] tch::TchError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("checkpoint {path}: format version {found}, this build reads {supported}")]
    Version { path: PathBuf, found: String, supported: String },
    #[error("checkpoint {path}: model config conflict, expected {expected}, found {found}")]
    ConfigConflict { path: PathBuf, expected: String, found: String },
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} ({samples})")]
    Diverged { epoch: usize, batch: usize, loss: f64, samples: String },
}

pub type Result<T> = std::result::Result<T, NetError>;

impl NetError {
    pub(crate) fn shape(expected: impl std::fmt::Display, actual: impl std::fmt::Debug) -> Self {
        NetError::Shape { expected: expected.to_string(), actual: format!("{actual:?}") }
    }
}

impl From<NetError> for mbhr_core::Error {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Core(c) => c,
            other => mbhr_core::Error::Other(other.to_string()),
        }
    }
}
