use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// NaN/Inf produced or consumed by a numeric routine.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("batch norm needs at least 2 values per channel in train mode, got {0}")]
    DegenerateBatch(usize),

    #[error("delta step needs at least 2 frames, got {0}")]
    DegenerateSequence(usize),

    #[error("frontend error: {0}")]
    Frontend(String),

    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    /// Binary or text file that does not follow its format.
    #[error("{}: format error at byte {offset}: {message}", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("failed to load embedding for {utt_id} from {}: {source}", path.display())]
    Load {
        utt_id: String,
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }

    /// True for failures caused by non-finite arithmetic rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric(_) => true,
            Error::Load { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
