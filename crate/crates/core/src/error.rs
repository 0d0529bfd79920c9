use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NesError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NesError {
    /// Invalid parameters, shapes or flags supplied by the caller.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that violates an operation's preconditions.
    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

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
}

impl NesError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        NesError::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        NesError::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NesError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for usage/configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            NesError::Config(_) => 2,
            _ => 1,
        }
    }
}
