use std::path::PathBuf;

use ndnum::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TadError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("split configuration error: {0}")]
    Split(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric divergence in {stage}: {detail}")]
    Divergence { stage: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("{0}")]
    Other(String),
}

impl TadError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TadError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn divergence(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        TadError::Divergence {
            stage: stage.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            TadError::Config(_) => 2,
            TadError::Num(NumError::Config(_)) => 2,
            TadError::Split(_) | TadError::Data(_) => 3,
            TadError::Divergence { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, TadError>;
