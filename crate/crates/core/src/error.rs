use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, axis, emptiness).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Bad user-supplied data, e.g. a target sequence containing blank.
    #[error("invalid input: {0}")]
    Input(String),

    /// The CTC lattice has no valid alignment for this (frames, targets) pair.
    #[error("ctc infeasible: {frames} frames cannot emit {labels} labels with {repeats} adjacent repeats")]
    Infeasible {
        frames: usize,
        labels: usize,
        repeats: usize,
    },

    #[error("non-finite value in `{param}` at flat index {index}")]
    NonFinite { param: String, index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
