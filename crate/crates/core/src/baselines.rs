//! Comparison methods. The learned ones are rewirings of the ACML model;
//! WCMP is a fixed split rule.

use serde::{Deserialize, Serialize};

use crate::env::Topology;
use crate::policy::{Trainer, TrainerConfig, Wiring};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    IndAc,
    Maddpg,
    Amp,
    Wcmp,
}

impl BaselineKind {
    /// Network wiring for learned baselines, `None` for WCMP.
    pub fn wiring(self) -> Option<Wiring> {
        match self {
            Self::IndAc => Some(Wiring::IND_AC),
            Self::Maddpg => Some(Wiring::MADDPG),
            Self::Amp => Some(Wiring::AMP),
            Self::Wcmp => None,
        }
    }
}

/// Independent actors and critics, no messages. Every critic regresses the
/// shared team reward.
pub fn build_ind_ac(topology: &Topology, config: TrainerConfig, seed: u64) -> Result<Trainer> {
    Trainer::for_topology(Wiring::IND_AC, topology, config, seed)
}

/// Message-free actors with one critic over all observations and actions.
pub fn build_maddpg(topology: &Topology, config: TrainerConfig, seed: u64) -> Result<Trainer> {
    Trainer::for_topology(Wiring::MADDPG, topology, config, seed)
}

/// Full message pipeline between actors, but one local critic per agent.
pub fn build_amp(topology: &Topology, config: TrainerConfig, seed: u64) -> Result<Trainer> {
    Trainer::for_topology(Wiring::AMP, topology, config, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WcmpWeighting {
    /// Proportional to each path's smallest link capacity.
    #[default]
    Bottleneck,
    Equal,
}

/// Static split for `agent`, proportional to path bottleneck capacities.
pub fn wcmp_act(topology: &Topology, agent: usize) -> Vec<f64> {
    wcmp_act_with(topology, agent, WcmpWeighting::Bottleneck)
}

pub fn wcmp_act_with(topology: &Topology, agent: usize, weighting: WcmpWeighting) -> Vec<f64> {
    let p = topology.num_paths(agent);
    let weights: Vec<f64> = match weighting {
        WcmpWeighting::Equal => vec![1.0; p],
        WcmpWeighting::Bottleneck => (0..p).map(|k| topology.bottleneck(agent, k)).collect(),
    };
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// WCMP actions for every agent.
pub fn wcmp_joint(topology: &Topology, weighting: WcmpWeighting) -> Vec<Vec<f64>> {
    (0..topology.num_agents())
        .map(|a| wcmp_act_with(topology, a, weighting))
        .collect()
}
