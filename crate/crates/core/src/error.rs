use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("unknown activation kind `{0}`")]
    UnknownActivation(String),

    #[error("row {row} of the one-hot target is not a valid one-hot vector")]
    InvalidOneHot { row: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown pain class `{0}`")]
    UnknownClass(String),

    #[error("recording has {len} samples, shorter than one window of {window}")]
    RecordingTooShort { len: usize, window: usize },

    #[error("too few trials: {available} available, {required} required")]
    TooFewTrials { available: usize, required: usize },

    #[error("unknown model kind `{0}`")]
    UnknownModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("class index {0} out of range")]
    ClassOutOfRange(usize),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
