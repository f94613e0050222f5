use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("invalid neighbor count k={k} for {n} points (need 1 <= k < n)")]
    InvalidK { k: usize, n: usize },

    #[error("node {0} has no neighbors")]
    IsolatedNode(usize),

    #[error("anchor {0} has no negatives (every other sample is a neighbor)")]
    NoNegatives(usize),

    #[error("anchor {0} has no positives")]
    NoPositives(usize),

    #[error("no anchor in the batch contributes to the loss")]
    EmptyBatchLoss,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch at line {line}: expected {expected} columns, found {found}")]
    DimMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
