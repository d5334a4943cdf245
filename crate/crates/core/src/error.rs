use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CafieError>;

#[derive(Debug, Error)]
pub enum CafieError {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("substitution error: {0}")]
    Substitution(String),

    #[error("empty corpus: no tokens to build from")]
    EmptyCorpus,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("vocabulary mismatch: expected {expected}, got {actual}")]
    VocabMismatch { expected: String, actual: String },

    #[error("degenerate distribution: total mass {mass:e} below floor (every token suppressed)")]
    DegenerateDistribution { mass: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: String, message: String },

    #[error("invalid model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CafieError {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        CafieError::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn vocab_size(expected: usize, actual: usize) -> Self {
        CafieError::VocabMismatch {
            expected: format!("{expected} entries"),
            actual: format!("{actual} entries"),
        }
    }

    pub(crate) fn param(name: &str, message: impl Into<String>) -> Self {
        CafieError::InvalidParameter {
            name: name.to_string(),
            message: message.into(),
        }
    }

    /// True for failures that originate in the model backend (remote or local).
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            CafieError::BackendUnavailable(_)
                | CafieError::VocabMismatch { .. }
                | CafieError::ModelFormat(_)
        )
    }

    /// True for failures caused by bad user-supplied configuration or input files.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            CafieError::Parse { .. }
                | CafieError::Validation(_)
                | CafieError::InvalidParameter { .. }
        )
    }
}

/// Reads a file, naming the path in any I/O error.
pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

pub(crate) fn read_text(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}
