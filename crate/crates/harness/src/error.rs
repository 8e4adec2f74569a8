use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error(
        "non-finite loss {loss} at epoch {epoch}, minibatch {minibatch} of {batches} (update {update}); \
         lower the learning rate or C"
    )]
    NonFiniteLoss {
        epoch: usize,
        minibatch: usize,
        batches: usize,
        update: u64,
        loss: f64,
    },

    #[error("ensemble: {0}")]
    Ensemble(String),

    #[error("model artifact {path}: {msg}")]
    Artifact { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Core(#[from] hingenet_core::Error),
}

impl HarnessError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
