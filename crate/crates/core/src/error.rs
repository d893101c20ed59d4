use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("Renyi order must be finite and > 1, got {0}")]
    InvalidOrder(f64),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("order mismatch: ledger tracks alpha={ledger}, outcome has alpha={outcome}")]
    OrderMismatch { ledger: f64, outcome: f64 },

    #[error("token `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),

    #[error("no recorded distribution for context {0:?}")]
    UnknownContext(Vec<u32>),

    #[error("corpus has {documents} documents, cannot form {shards} shards")]
    NotEnoughDocuments { documents: usize, shards: usize },

    #[error("shard {0} is empty")]
    EmptyShard(usize),

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDistribution(_) => "invalid_distribution",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidOrder(_) => "invalid_order",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::EmptyEnsemble => "empty_ensemble",
            Error::OrderMismatch { .. } => "order_mismatch",
            Error::OutOfVocabulary(_) => "out_of_vocabulary",
            Error::UnknownContext(_) => "unknown_context",
            Error::NotEnoughDocuments { .. } => "not_enough_documents",
            Error::EmptyShard(_) => "empty_shard",
            Error::Config { .. } => "config",
            Error::Parse { .. } => "parse",
            Error::FormatVersion { .. } => "format_version",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
