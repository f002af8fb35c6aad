use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vocab too small: need at least {required} entries ({chars} characters + 4 reserved), got {requested}")]
    VocabTooSmall {
        requested: usize,
        required: usize,
        chars: usize,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty input string")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown token id {id} (vocabulary size {size})")]
    UnknownId { id: u32, size: usize },
    #[error("segmentation does not realize {raw:?}")]
    SegmentationMismatch { raw: String },
    #[error("malformed decoder prefix: {0}")]
    MalformedPrefix(String),
    #[error("vocabulary format error at line {line}: {msg}")]
    VocabFormat { line: usize, msg: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("model file error at line {line}: {msg}")]
    ModelFormat { line: usize, msg: String },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("sentence {index}: {source}")]
    Sentence {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("experiment cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    RawIo(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error (or the error it wraps) comes from a non-finite
    /// numeric result rather than bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Diverged { .. } | Error::NonFiniteLoss => true,
            Error::Sentence { source, .. } | Error::Cell { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
