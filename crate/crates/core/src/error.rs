use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the harness. Row-level problems that let a run continue
/// (rejected rows, invalid answers, excluded judge scores) are reported as
/// values, not through this type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("duplicate document id `{0}`")]
    DuplicateId(String),

    #[error("collection filter `{filter}` selects zero documents")]
    EmptyCollection { filter: String },

    #[error("mixture stereo fraction {requested} is unreachable; achievable range is [{min_achievable}, {max_achievable}]")]
    UnreachableMixture {
        requested: f64,
        min_achievable: f64,
        max_achievable: f64,
    },

    #[error("too many rejected rows in {path}: {rejected} of {total}")]
    TooManyRejects {
        path: PathBuf,
        rejected: usize,
        total: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector: {0}")]
    ZeroVector(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid interval ({low}, {high})")]
    InvalidInterval { low: f64, high: f64 },

    #[error("unknown document id `{0}` (index and collection disagree)")]
    UnknownDocument(String),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("malformed service response: {0}")]
    MalformedResponse(String),

    #[error("mitigation error: {0}")]
    Mitigation(String),

    #[error("run directory {0} already exists (pass --resume to continue it)")]
    RunExists(PathBuf),

    #[error("slice {slice}: {source}")]
    Slice {
        slice: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
