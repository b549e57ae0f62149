use thiserror::Error;

/// Errors produced by the embedding pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record `{id}` has an empty sequence")]
    EmptySequence { id: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("record `{id}`: character {symbol:?} at position {position} is not in the alphabet")]
    UnknownSymbol {
        id: String,
        symbol: char,
        position: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    #[error("optimizer diverged at iteration {iteration} (non-finite value); try a lower learning rate")]
    Divergence { iteration: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    /// True for errors caused by bad input or configuration rather than by the
    /// numerics themselves.
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Degenerate(_) | Error::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
