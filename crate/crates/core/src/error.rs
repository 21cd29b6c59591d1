use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid signal: {0}")]
    Signal(String),

    #[error("wav error in {path}: {reason}")]
    Wav { path: PathBuf, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("adaptation diverged: {0}")]
    Diverged(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("measurement undefined: {0}")]
    Measurement(String),

    #[error("frozen model was modified: {0}")]
    FrozenModified(String),
}

impl Error {
    /// True for failures of the numerics rather than of inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged(_) | Error::NonFinite(_) | Error::FrozenModified(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
