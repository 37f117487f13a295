use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum FddmError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate vector: norm {norm:e} is below {eps:e}")]
    DegenerateVector { norm: f64, eps: f64 },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("manifest is empty")]
    EmptyManifest,

    #[error("split error: {0}")]
    Split(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FddmError {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        FddmError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FddmError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = FddmError> = std::result::Result<T, E>;
