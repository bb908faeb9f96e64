use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty reduction")]
    EmptyReduction,

    #[error("zero dimension: {rows}x{cols}")]
    ZeroDimension { rows: usize, cols: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("instance too large for enumeration: {labels}^{len} sequences")]
    InstanceTooLarge { labels: usize, len: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("embedding dimension mismatch: configured {expected}, file has {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("unknown task {0}")]
    UnknownTask(String),

    #[error("label {label} is not in the label set of task {task}")]
    UnknownLabel { task: String, label: String },

    #[error("label id {id} out of range for {labels} labels")]
    LabelOutOfRange { id: usize, labels: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
