use thiserror::Error;

/// Errors produced by the control library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("optimizer aborted: {0}")]
    Optimizer(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("corrupt log: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, Error>;
