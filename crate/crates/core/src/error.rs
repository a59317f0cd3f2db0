use thiserror::Error;

use crate::env::EnvError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("numeric failure at step {step}: {source}")]
    Numeric { step: usize, source: NnError },
    #[error("width mismatch in {what}: expected {expected}, got {got}")]
    Width {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Attaches the training step at which a numeric failure happened.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::Nn(source @ NnError::NonFinite(_)) => Error::Numeric { step, source },
            other => other,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
