use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum LapsError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("magic number mismatch: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dimension mismatch: header implies {expected} bytes, file has {found}")]
    TrailingBytes { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stream too short: {0}")]
    TooShort(String),
    #[error("degenerate labels: pseudo-labels contain no positives, F1 is undefined")]
    DegenerateLabels,
    #[error("degenerate embedding for primitive {0}: zero vector")]
    DegenerateEmbedding(String),
    #[error("cluster {cluster} too small for ICSS ({members} member)")]
    ClusterTooSmall { cluster: usize, members: usize },
    #[error("{0} must be sorted in non-decreasing order")]
    Unsorted(&'static str),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl LapsError {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        LapsError::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LapsError::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad category used by the command-line front end to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            LapsError::Config(_) => ErrorKind::Usage,
            LapsError::Internal(_) => ErrorKind::Internal,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Internal,
}

pub type Result<T, E = LapsError> = std::result::Result<T, E>;
