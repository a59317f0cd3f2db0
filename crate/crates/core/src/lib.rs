//! Multi-agent actor-critic with learned inter-agent messages (ACML) and its
//! gated, message-pruning extension (GACML), trained on a flow-splitting
//! packet-routing simulator.
//!
//! Module map:
//! - [`nn`]: dense networks, backpropagation, Adam/SGD, target networks.
//! - [`env`]: topologies, demand processes, link utilization and MLU reward.
//! - [`policy`]: the message pipeline, replay buffer and DDPG-style trainer.
//! - [`gating`]: gate network, thresholds, auxiliary labels, gate training.
//! - [`baselines`]: IND-AC, MADDPG, AMP wirings and the static WCMP rule.
//! - [`harness`]: experiment configs, metrics, sweeps, checkpoints.

pub mod baselines;
pub mod env;
pub mod par;
pub mod gating;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod rng;

mod error;

pub use error::{Error, Result};
