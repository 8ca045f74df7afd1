use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("arithmetic overflow evaluating `{0}`")]
    Overflow(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Network or server failure; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),

    #[error("malformed backend response: {0}")]
    Protocol(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("missing hidden-state grids for {} sample(s): {}", .0.len(), .0.join(", "))]
    MissingGrids(Vec<String>),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed dump file: {0}")]
    Dump(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }
}
