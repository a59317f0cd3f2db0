//! ACML: per-agent actors and message generators, a shared message
//! coordinator and a shared critic, trained with multi-agent deterministic
//! policy gradients. The same machinery, rewired, backs the learned
//! baselines.

mod config;
mod model;
mod replay;
mod trainer;

pub use config::{OptimizerChoice, TrainerConfig};
pub use model::{rows, AgentNets, CriticKind, MultiAgentModel, PolicyGrads, PolicyPass, Wiring};
pub use replay::{Batch, JointExperience, ReplayBuffer};
pub use trainer::{
    acml_act, continue_training, run_training, stack_rows, td_targets, ActOutput, Optimizers,
    Trainer, TrainingCurve, TrainingOutcome, UpdateStats,
};
