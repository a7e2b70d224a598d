use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed file header or container.
    #[error("format error: {0}")]
    Format(String),

    /// Two inputs disagree (counts, IDs, references).
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// Invalid generator specification.
    #[error("spec error: {0}")]
    Spec(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("diverged at {stage} {index}: {detail}")]
    Divergence {
        stage: &'static str,
        index: usize,
        detail: String,
    },

    /// A quantity is mathematically undefined for the given input.
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("invalid config field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
