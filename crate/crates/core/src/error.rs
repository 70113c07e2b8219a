use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A binary or text container did not follow its declared layout.
    #[error("format error: {0}")]
    Format(String),

    /// Two inputs that must agree (counts, shapes, specs) do not.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A NaN or infinity appeared where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Layer specifications do not chain.
    #[error("network spec error: {0}")]
    Spec(String),

    /// The requested forward mode is unusable for this input.
    #[error("mode error: {0}")]
    Mode(String),

    /// The training loss became non-finite; the trainer state still
    /// reflects the last completed iteration.
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: u64, detail: String },

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn consistency(msg: impl Into<String>) -> Self {
        Error::Consistency(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
