//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("manifest row {row}: {message}")]
    ManifestRow { row: usize, message: String },

    #[error("duplicate capture_id `{0}` in manifest")]
    DuplicateCaptureId(String),

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A metric or geometric quantity has no defined value for this input.
    #[error("undefined: {0}")]
    Undefined(String),

    /// Encoding produced no usable bits.
    #[error("empty iris code: every code cell is masked out")]
    EmptyCode,

    /// Pairing policy matched no enrollment captures.
    #[error("empty pairing: policy `{0}` matched no enrollment captures")]
    EmptyPairing(String),

    /// One comparison class has no members.
    #[error("empty class: {0}")]
    EmptyClass(&'static str),

    /// Model fitting cannot proceed (single-class labels, too few samples).
    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    /// A pipeline stage failed; carries the stage name and the cause.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn undefined(message: impl Into<String>) -> Self {
        Error::Undefined(message.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
