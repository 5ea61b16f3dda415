use std::io;

use thiserror::Error;

/// Errors raised anywhere in the codec.
#[derive(Debug, Error)]
pub enum MtrError {
    /// A caller broke an operation's shape or range contract.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Model, training or CLI configuration is unusable.
    #[error("configuration error: {0}")]
    Config(String),
    /// A bitstream, weights file, frame or skeleton file could not be parsed.
    #[error("decode error: {0}")]
    Decode(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl MtrError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        MtrError::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        MtrError::Config(msg.into())
    }

    pub(crate) fn decode(msg: impl Into<String>) -> Self {
        MtrError::Decode(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, MtrError>;
