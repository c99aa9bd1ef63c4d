use thiserror::Error;

use crate::symtensor::SymError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] SymError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

impl Error {
    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Invalid(_) => 2,
            Error::Capacity(_) => 3,
            Error::Numerical(_) | Error::Tensor(_) => 4,
            Error::Io(_) | Error::Format(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
