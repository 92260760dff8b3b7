//! Error type shared across the toolkit.

use std::path::PathBuf;

/// Unified error for all toolkit operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error at {path}: {detail}")]
    Wav { path: PathBuf, detail: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("manifest error at line {line}: {detail}")]
    Manifest { line: usize, detail: String },

    /// Input fails a documented precondition (bad label range, short audio,
    /// mismatched shapes, out-of-range config values, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training aborted on a non-finite loss; the last finite checkpoint was kept.
    #[error("divergence at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
