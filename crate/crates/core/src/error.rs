use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },

    #[error("numerical error at row {row}: {what}")]
    Numerical { row: usize, what: String },

    #[error("line search failed at iteration {iteration}: {reason}")]
    LineSearch { iteration: usize, reason: String },

    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("length mismatch: metadata declares {declared} bytes of payload, file holds {actual}")]
    LengthMismatch { declared: u64, actual: u64 },

    #[error("malformed metadata: {0}")]
    Metadata(String),

    #[error("missing feature file for key {0}")]
    MissingFeatures(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failure during computation or I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::DimensionMismatch { .. }
                | Error::ZeroNorm { .. }
                | Error::BadMagic { .. }
                | Error::Truncated { .. }
                | Error::LengthMismatch { .. }
                | Error::Metadata(_)
                | Error::MissingFeatures(_)
        )
    }
}
