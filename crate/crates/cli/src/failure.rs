//! Exit codes and the error type every command returns.

use std::fmt;

use emoxl::error::{CheckpointError, DataError};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_CHECKPOINT: u8 = 3;

/// An error plus the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }

    pub fn usage(message: impl fmt::Display) -> Self {
        Failure::new(EXIT_USAGE, anyhow::anyhow!("{message}"))
    }

    pub fn data(message: impl fmt::Display) -> Self {
        Failure::new(EXIT_DATA, anyhow::anyhow!("{message}"))
    }

    pub fn context(self, context: impl fmt::Display + Send + Sync + 'static) -> Self {
        Failure {
            code: self.code,
            error: self.error.context(context),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<emoxl::Error> for Failure {
    fn from(e: emoxl::Error) -> Self {
        let code = match &e {
            emoxl::Error::Data(_) | emoxl::Error::Eval(_) => EXIT_DATA,
            emoxl::Error::Checkpoint(_) => EXIT_CHECKPOINT,
            emoxl::Error::Tensor(_) | emoxl::Error::Config(_) => EXIT_USAGE,
        };
        Failure::new(code, e)
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::new(EXIT_DATA, e)
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::new(EXIT_CHECKPOINT, e)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;
