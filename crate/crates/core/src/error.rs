use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{what} needs at least {need} frames, got {got}")]
    TooFewFrames {
        what: &'static str,
        need: usize,
        got: usize,
    },

    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),

    #[error("{what} = {value} is not divisible by {factor}")]
    NotDivisible {
        what: &'static str,
        value: usize,
        factor: usize,
    },

    #[error("embedding dimension must be even, got {0}")]
    OddDimension(usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("clip of {length} frames at stride {stride} needs {need} source frames, got {got}")]
    InsufficientFrames {
        length: usize,
        stride: usize,
        need: usize,
        got: usize,
    },

    #[error("infeasible shape spec: {0}")]
    InfeasibleSpec(String),

    #[error("missing ablation variant: {0}")]
    MissingVariant(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
