//! Flow-splitting routing simulator.
//!
//! Each commodity (source edge router to destination edge router) is driven by
//! one agent that splits its demand over a fixed set of candidate paths. Link
//! utilization is flow over capacity; the shared reward is `1 - MLU`.

mod flow;
mod sim;
mod topology;

pub use flow::{DemandTrace, FlowProcess, FlowSpec, Sinusoid};
pub use sim::{link_utilization, Observation, RoutingEnv, StepResult, HISTORY};
pub use topology::{Commodity, Link, Path, Topology, TopologyFile};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown topology {0:?} (expected small, moderate, large or a file path)")]
    UnknownTopology(String),
    #[error("invalid topology: {}", .0.join("; "))]
    InvalidTopology(Vec<String>),
    #[error("trace line {line}: {message}")]
    Trace { line: u64, message: String },
    #[error("flow spec: {0}")]
    Flow(String),
    #[error("agent {agent}: {message}")]
    InvalidAction { agent: usize, message: String },
    #[error("expected {expected} agent actions, got {got}")]
    AgentCount { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EnvError>;
