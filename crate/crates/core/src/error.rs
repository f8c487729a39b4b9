use std::path::PathBuf;

/// Errors produced by index construction, model evaluation and file IO.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Model file failed to parse or violates a load-time invariant.
    #[error("model load error at {field}: {reason}")]
    ModelLoad { field: String, reason: String },

    /// Binary matrix/graph file is malformed (bad magic, version, truncation).
    #[error("{kind} file error in {path}: {reason}")]
    FileFormat {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite value surfaced during evaluation or factorization.
    #[error("numeric error in {context}: {reason}")]
    Numeric { context: String, reason: String },

    #[error("graph invariant violated: {0}")]
    GraphInvariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
