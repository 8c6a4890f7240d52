use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {value} outside the unit domain")]
    Domain { value: f64 },

    #[error("invalid warp: {0}")]
    InvalidWarp(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("fixed-point solver produced a non-finite iterate at iteration {iteration}")]
    Solver { iteration: usize },

    #[error("optimizer diverged: {0}")]
    Optimizer(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
