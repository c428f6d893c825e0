use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid condition: class {class} out of range (classes: {num_classes})")]
    InvalidCondition { class: usize, num_classes: usize },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("layer {k} out of range 1..={depth}")]
    Layer { k: usize, depth: usize },

    #[error("density error: std must be positive, got {0}")]
    Density(f64),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("divergence at {0}")]
    Divergence(String),

    #[error("leaf index {index} out of range (leaves: {leaves})")]
    Leaf { index: usize, leaves: usize },

    #[error("group size {0} too small, need at least 2")]
    GroupSize(usize),

    #[error("missing old log-probability on {0}")]
    Ledger(String),

    #[error("non-finite ratio on {0}")]
    Ratio(String),

    #[error("non-finite finite-difference probe at parameter {0}")]
    Probe(usize),

    #[error("empty sample")]
    EmptySample,

    #[error("config error: {0}")]
    Config(String),

    #[error("merge error: {0}")]
    Merge(String),

    #[error("oracle mismatch: {0}")]
    OracleMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
