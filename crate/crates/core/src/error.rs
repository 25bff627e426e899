use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The prediction change (or loss derivative) at the update point is too
    /// small to normalize by.
    #[error("degenerate update: {0}")]
    DegenerateUpdate(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("training diverged in epoch {epoch} with learning rate {eta:e}")]
    Diverged { epoch: usize, eta: f64 },

    #[error("neighbor graph is disconnected ({0}); increase k or sample more densely")]
    DisconnectedGraph(String),

    #[error("duplicate feature vectors at primary indices {0} and {1}")]
    DuplicateFeature(usize, usize),

    #[error("diagonal entry {index} is not positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("image set is already standardized")]
    AlreadyStandardized,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("IDX parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("CSV format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
