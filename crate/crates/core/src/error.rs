use thiserror::Error;

/// Errors produced by the refinement toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sequence too short: need at least {need} frames, got {got}")]
    TooShort { need: usize, got: usize },

    #[error(
        "sequence has {frames} frames but the model accepts at most {max}; \
         refine it in windows of at most {max} frames"
    )]
    TooLong { frames: usize, max: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("zero valid frames")]
    NoValidFrames,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("version mismatch: expected {expected:?}, found {found:?}")]
    Version { expected: String, found: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
