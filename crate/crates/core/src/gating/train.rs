use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gate::{apply_gate, gating_loss, label, GateDecision, GatingNet};
use super::threshold::{ThresholdMode, ThresholdState};
use crate::env::RoutingEnv;
use crate::nn::OptimizerState;
use crate::policy::{rows, ActOutput, CriticKind, JointExperience, MultiAgentModel, Trainer};
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// `ΔQ_i` for every agent and every row of `obs`: the critic's value of the
/// fully communicating joint action minus its value when only agent `i`
/// acts on a zero message. Other agents communicate in both terms.
pub fn delta_q_batch(model: &MultiAgentModel, obs: &[Array2<f64>]) -> Result<Vec<Array1<f64>>> {
    if !model.communicates() {
        return Err(Error::Invalid("ΔQ needs a message-passing model".into()));
    }
    let pass = model.policy_forward(obs, None)?;
    let with_all = model.q_values(obs, &pass.actions)?;
    let batch = obs[0].nrows();
    let mut out = Vec::with_capacity(model.num_agents());
    for i in 0..model.num_agents() {
        let silent = Array2::zeros((batch, model.message_width));
        let a_local = model.actor_with_message(i, obs[i].view(), silent.view())?;
        let mut actions = pass.actions.clone();
        actions[i] = a_local;
        let without = model.q_values(obs, &actions)?;
        let k = critic_for(model, i);
        out.push(&with_all[k] - &without[k]);
    }
    Ok(out)
}

/// `ΔQ_i` for a single joint observation.
pub fn delta_q(model: &MultiAgentModel, obs: &[Vec<f64>], agent: usize) -> Result<f64> {
    if agent >= model.num_agents() {
        return Err(Error::Invalid(format!("no agent {agent}")));
    }
    Ok(delta_q_batch(model, &rows(obs))?[agent][0])
}

fn critic_for(model: &MultiAgentModel, agent: usize) -> usize {
    match model.wiring.critic {
        CriticKind::Central => 0,
        CriticKind::PerAgent => agent,
    }
}

/// How gates are decided at execution time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateOverride {
    #[default]
    Learned,
    AllOpen,
    AllClosed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedAct {
    pub act: ActOutput,
    pub decisions: Vec<GateDecision>,
}

impl GatedAct {
    pub fn sent(&self) -> usize {
        self.decisions.iter().filter(|d| d.g).count()
    }
}

/// Execution with gates: a shut gate zeroes both the agent's outgoing
/// message and the global message it receives back.
pub fn gacml_act(
    model: &MultiAgentModel,
    gates: &[GatingNet],
    obs: &[Vec<f64>],
    mode: GateOverride,
) -> Result<GatedAct> {
    let n = model.num_agents();
    let decisions = match mode {
        GateOverride::AllOpen => vec![GateDecision { p: 1.0, g: true }; n],
        GateOverride::AllClosed => vec![GateDecision { p: 0.0, g: false }; n],
        GateOverride::Learned => {
            if gates.len() != n {
                return Err(Error::Width {
                    what: "gate count",
                    expected: n,
                    got: gates.len(),
                });
            }
            gates
                .iter()
                .zip(obs)
                .map(|(net, o)| net.decide(o))
                .collect::<Result<_>>()?
        }
    };
    let masks: Vec<Array1<f64>> = decisions
        .iter()
        .map(|d| Array1::from_elem(1, if d.g { 1.0 } else { 0.0 }))
        .collect();
    let pass = model.policy_forward(&rows(obs), Some(&masks))?;
    let act = ActOutput {
        actions: pass.actions.iter().map(|a| a.row(0).to_vec()).collect(),
        local_messages: pass
            .local_messages
            .iter()
            .zip(&decisions)
            .map(|(m, d)| apply_gate(m.row(0).as_slice().expect("row-major"), d.g))
            .collect(),
        global_messages: pass.global_messages.iter().map(|m| m.row(0).to_vec()).collect(),
    };
    Ok(GatedAct { act, decisions })
}

/// Message and reward tallies over a stretch of gated steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GateStats {
    pub steps: u64,
    /// Local messages sent, per agent.
    pub sent: Vec<u64>,
    pub reward_sum: f64,
    pub mlu_sum: f64,
}

impl GateStats {
    pub fn new(agents: usize) -> Self {
        Self {
            sent: vec![0; agents],
            ..Self::default()
        }
    }

    pub fn record(&mut self, decisions: &[GateDecision], reward: f64, mlu: f64) {
        self.steps += 1;
        for (s, d) in self.sent.iter_mut().zip(decisions) {
            *s += u64::from(d.g);
        }
        self.reward_sum += reward;
        self.mlu_sum += mlu;
    }

    pub fn messages_sent(&self) -> u64 {
        self.sent.iter().sum()
    }

    pub fn messages_possible(&self) -> u64 {
        self.steps * self.sent.len() as u64
    }

    pub fn prune_fraction(&self) -> f64 {
        let possible = self.messages_possible();
        if possible == 0 {
            return 0.0;
        }
        1.0 - self.messages_sent() as f64 / possible as f64
    }

    pub fn open_rates(&self) -> Vec<f64> {
        self.sent
            .iter()
            .map(|&s| s as f64 / self.steps.max(1) as f64)
            .collect()
    }

    pub fn mean_reward(&self) -> f64 {
        self.reward_sum / self.steps.max(1) as f64
    }

    pub fn mean_mlu(&self) -> f64 {
        self.mlu_sum / self.steps.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateTrainConfig {
    pub threshold: ThresholdMode,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Most recent labeled observations kept per agent.
    pub buffer_capacity: usize,
    pub episode_len: usize,
    /// Keep training the phase-1 networks on gated rollouts.
    pub fine_tune: bool,
}

impl Default for GateTrainConfig {
    fn default() -> Self {
        Self {
            threshold: ThresholdMode::Dynamic { beta: 0.8 },
            steps: 5000,
            batch_size: 128,
            lr: 0.001,
            hidden: vec![64, 32],
            buffer_capacity: 5000,
            episode_len: 400,
            fine_tune: false,
        }
    }
}

impl GateTrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.threshold.violations();
        if self.batch_size == 0 {
            v.push("gate batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            v.push("gate lr must be positive".into());
        }
        if self.buffer_capacity == 0 {
            v.push("gate buffer_capacity must be positive".into());
        }
        if self.episode_len == 0 {
            v.push("gate episode_len must be positive".into());
        }
        v
    }
}

pub struct GateOutcome {
    pub gates: Vec<GatingNet>,
    /// Phase-1 networks, fine-tuned only if requested.
    pub model: MultiAgentModel,
    /// One entry per training episode.
    pub episodes: Vec<GateStats>,
    pub thresholds: Vec<ThresholdState>,
    pub final_loss: Vec<f64>,
}

struct LabelBuffer {
    obs: Vec<Vec<f64>>,
    labels: Vec<bool>,
    next: usize,
    capacity: usize,
}

impl LabelBuffer {
    fn new(capacity: usize) -> Self {
        Self {
            obs: Vec::new(),
            labels: Vec::new(),
            next: 0,
            capacity,
        }
    }

    fn push(&mut self, o: Vec<f64>, y: bool) {
        if self.obs.len() < self.capacity {
            self.obs.push(o);
            self.labels.push(y);
        } else {
            self.obs[self.next] = o;
            self.labels[self.next] = y;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Array2<f64>, Vec<bool>) {
        let w = self.obs[0].len();
        let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.obs.len())).collect();
        let x = Array2::from_shape_fn((n, w), |(r, c)| self.obs[picks[r]][c]);
        (x, picks.iter().map(|&k| self.labels[k]).collect())
    }
}

/// Phase 2: roll out the phase-1 policy with the current gates, label each
/// agent's observation against its running threshold and fit the gates by
/// cross-entropy. Labels always come from the ungated critic comparison.
pub fn train_gate(
    phase1: &Trainer,
    env: &mut RoutingEnv,
    config: &GateTrainConfig,
    seed: u64,
) -> Result<GateOutcome> {
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let n = env.num_agents();
    let mut tuner = config.fine_tune.then(|| phase1.clone());
    let mut init = rng::stream(seed, Stream::GateInit);
    let mut gates: Vec<GatingNet> = (0..n)
        .map(|i| GatingNet::new(env.feature_width(i), &config.hidden, &mut init))
        .collect::<Result<_>>()?;
    let mut optimizers: Vec<OptimizerState> = gates
        .iter()
        .map(|g| OptimizerState::adam(config.lr, &g.net.params))
        .collect();
    let mut thresholds: Vec<ThresholdState> =
        (0..n).map(|_| ThresholdState::new(config.threshold)).collect();
    let mut buffers: Vec<LabelBuffer> = (0..n).map(|_| LabelBuffer::new(config.buffer_capacity)).collect();
    let mut sample_rng = rng::stream(seed, Stream::GateReplay);
    let mut episodes = Vec::new();
    let mut stats = GateStats::new(n);
    let mut final_loss = vec![f64::NAN; n];
    let mut episode = 0u64;
    env.reset(rng::episode_seed(seed, Stream::GateEpisodes, episode));
    let mut obs = env.features_all();
    for step in 0..config.steps {
        if step > 0 && step % config.episode_len == 0 {
            episodes.push(std::mem::replace(&mut stats, GateStats::new(n)));
            episode += 1;
            env.reset(rng::episode_seed(seed, Stream::GateEpisodes, episode));
            obs = env.features_all();
        }
        let model = tuner.as_ref().map_or(&phase1.online, |t| &t.online);
        let dq = delta_q_batch(model, &rows(&obs)).map_err(|e| e.at_step(step))?;
        for i in 0..n {
            let t = thresholds[i].observe(dq[i][0])?;
            buffers[i].push(obs[i].clone(), label(dq[i][0], t));
        }
        let gated = gacml_act(model, &gates, &obs, GateOverride::Learned)?;
        let result = env.step(&gated.act.actions)?;
        stats.record(&gated.decisions, result.reward, result.mlu);
        let next_obs = env.features_all();
        for i in 0..n {
            let (x, y) = buffers[i].sample(config.batch_size, &mut sample_rng);
            final_loss[i] =
                gating_loss(&mut gates[i], &mut optimizers[i], x.view(), &y).map_err(|e| e.at_step(step))?;
        }
        if let Some(t) = tuner.as_mut() {
            t.buffer.push(JointExperience {
                observations: obs,
                actions: gated.act.actions,
                reward: result.reward,
                next_observations: next_obs.clone(),
            });
            t.update().map_err(|e| e.at_step(step))?;
        }
        obs = next_obs;
    }
    if stats.steps > 0 {
        episodes.push(stats);
    }
    Ok(GateOutcome {
        gates,
        model: tuner.map_or_else(|| phase1.online.clone(), |t| t.online),
        episodes,
        thresholds,
        final_loss,
    })
}
