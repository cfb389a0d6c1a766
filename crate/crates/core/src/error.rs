use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("frame index {index} out of range (video holds {count} frames)")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("{value} is outside the domain of {function} ({domain})")]
    Domain {
        function: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("expected {expected}, found {found}")]
    Layout {
        expected: &'static str,
        found: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cosine similarity of a zero vector is undefined")]
    ZeroVector,

    #[error("anchor {anchor} has no other member of its class in the batch")]
    SingletonClass { anchor: usize },

    #[error("anchor {anchor} cannot be routed to a loss: {reason}")]
    Unroutable { anchor: usize, reason: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("encoder failure: {0}")]
    Encoder(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("schema version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupted file {path}: {reason}")]
    Corrupted { path: PathBuf, reason: String },

    #[error("duplicate video id {0:?}")]
    DuplicateId(String),

    #[error("missing features for {0:?}")]
    MissingFeatures(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
