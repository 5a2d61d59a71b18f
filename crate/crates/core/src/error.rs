use std::path::PathBuf;

/// Errors raised by the library and the CLI runner.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown parameter block `{0}`")]
    UnknownBlock(String),

    #[error("duplicate parameter block `{0}`")]
    DuplicateBlock(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("non-finite gradient entry in block `{block}` (index {index})")]
    NonFiniteGradient { block: String, index: usize },

    #[error("non-finite loss evaluation during {0}")]
    NonFiniteLoss(String),

    #[error("non-finite state at integration step {step}")]
    NonFiniteState { step: usize },

    #[error("trajectory has no stage cache for step {0}")]
    MissingStages(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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
}
