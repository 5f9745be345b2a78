use std::io;

use thiserror::Error;

/// Errors produced while building or evaluating a neighbor graph.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter violates an operation's precondition.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A dataset or graph file could not be decoded.
    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Param(msg.into())
}

pub(crate) fn format(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}
