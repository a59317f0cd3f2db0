//! Dense feed-forward networks with exact backpropagation.
//!
//! Every network in the crate (actors, critics, message generator and
//! coordinator, gates) is an [`Mlp`]: a stack of affine layers, each followed
//! by an [`Activation`]. Computation is batched: rows of the input matrix are
//! samples. All arithmetic is `f64`.

mod mlp;
mod optim;
mod target;

pub use mlp::{
    backward, forward, forward_batch, Activation, ForwardCache, Mlp, MlpParams, MlpSpec, ParamSet,
};
pub use optim::{AdamConfig, OptimizerKind, OptimizerState};
pub use target::TargetLink;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("forward cache does not belong to these parameters")]
    StaleCache,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, NnError>;
