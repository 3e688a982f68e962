use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SdeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SdeError {
    /// A matrix or vector has the wrong shape.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: String,
        got: String,
    },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    /// A state became non-finite while integrating.
    #[error("numeric overflow in scheme {scheme} at step {step}")]
    Overflow { scheme: String, step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("model '{model}' is missing parameter '{param}'")]
    MissingParameter { model: String, param: String },

    #[error("invalid parameter '{param}': {reason}")]
    InvalidParameter { param: String, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed report {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SdeError {
    pub(crate) fn dimension(
        what: impl Into<String>,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        SdeError::Dimension {
            what: what.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SdeError::Io {
            path: path.into(),
            source,
        }
    }
}
