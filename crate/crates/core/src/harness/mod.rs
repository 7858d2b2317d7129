//! Experiment harness behind the `adjoint-seminorm` binary.

pub mod bench;
pub mod config;
pub mod gradcheck;
pub mod problem;
pub mod solve;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Solver(#[from] crate::Error),
    #[error("{0}")]
    Threshold(String),
}

impl HarnessError {
    /// 2 for unusable input, 1 for everything that went wrong after loading it.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Io(e.into())
    }
}
