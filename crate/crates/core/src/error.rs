use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate {kind} id {id:?} at line {line}")]
    DuplicateId {
        kind: &'static str,
        id: String,
        line: usize,
    },

    #[error("invalid record at line {line}: {message}")]
    InvalidRecord { line: usize, message: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("product {0:?} has no question/answer pairs")]
    EmptyProduct(String),

    #[error("unknown document {0:?}")]
    UnknownDocument(String),

    #[error("unknown product {0:?}")]
    UnknownProduct(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("truncated file: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("no responses for any of {uncovered} labeled queries")]
    NoResponses { uncovered: usize },

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

    /// Short stable tag for machine-readable error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::DuplicateId { .. } => "duplicate_id",
            Error::InvalidRecord { .. } => "invalid_record",
            Error::InvalidConfig(_) => "invalid_config",
            Error::EmptyProduct(_) => "empty_product",
            Error::UnknownDocument(_) => "unknown_document",
            Error::UnknownProduct(_) => "unknown_product",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::Version { .. } => "version",
            Error::Metric(_) => "metric",
            Error::NoResponses { .. } => "no_responses",
            Error::Json(_) => "json",
        }
    }
}
