use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what} at line {line}: {msg}")]
    Parse { what: &'static str, line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty vocabulary: no token reaches min_count={min_count}")]
    EmptyVocabulary { min_count: u64 },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch { what: &'static str, expected: Vec<usize>, found: Vec<usize> },

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("batch of size {0} has no negatives; at least 2 segments are required")]
    BatchTooSmall(usize),

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: u64 },

    #[error("k-means could not fill empty clusters after {retries} re-seeds")]
    EmptyCluster { retries: usize },

    #[error("mapping has no mapped aspect")]
    NothingMapped,

    #[error("entropy filter removed every training sample; raise chi_g / chi_ng")]
    EmptyFilteredSet,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
