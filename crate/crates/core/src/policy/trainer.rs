use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{rows, MultiAgentModel, PolicyGrads, Wiring};
use super::replay::{Batch, JointExperience, ReplayBuffer};
use super::{OptimizerChoice, TrainerConfig};
use crate::env::{RoutingEnv, Topology};
use crate::nn::{Activation, Mlp, OptimizerState};
use crate::rng::{self, RunRng, Stream};
use crate::{Error, Result};

/// Output of one execution step for every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub actions: Vec<Vec<f64>>,
    pub local_messages: Vec<Vec<f64>>,
    pub global_messages: Vec<Vec<f64>>,
}

/// Runs the execution pipeline for one joint observation. With `noise`,
/// Gaussian noise of the given std-dev is added to each actor's
/// pre-softmax logits.
pub fn acml_act<R: Rng + ?Sized>(
    model: &MultiAgentModel,
    obs: &[Vec<f64>],
    noise: Option<(f64, &mut R)>,
) -> Result<ActOutput> {
    let pass = model.policy_forward(&rows(obs), None)?;
    let actions = match noise {
        None => pass.actions.iter().map(|a| a.row(0).to_vec()).collect(),
        Some((sigma, rng)) => (0..model.num_agents())
            .map(|i| {
                let mut z = pass.actor_logits(i).clone();
                z.mapv_inplace(|x| x + sigma * rng.sample::<f64, _>(StandardNormal));
                Activation::Softmax.apply(&mut z);
                z.row(0).to_vec()
            })
            .collect(),
    };
    Ok(ActOutput {
        actions,
        local_messages: pass.local_messages.iter().map(|m| m.row(0).to_vec()).collect(),
        global_messages: pass.global_messages.iter().map(|m| m.row(0).to_vec()).collect(),
    })
}

/// Optimizer state for every online network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub actors: Vec<OptimizerState>,
    pub generators: Vec<Option<OptimizerState>>,
    pub coordinator: Option<OptimizerState>,
    pub critics: Vec<OptimizerState>,
}

impl Optimizers {
    pub fn new(model: &MultiAgentModel, config: &TrainerConfig) -> Self {
        let make = |net: &Mlp, lr: f64| match config.optimizer {
            OptimizerChoice::Adam => OptimizerState::adam(lr, &net.params),
            OptimizerChoice::Sgd => OptimizerState::sgd(lr),
        };
        Self {
            actors: model
                .agents
                .iter()
                .map(|a| make(&a.actor, config.lr_actor))
                .collect(),
            generators: model
                .agents
                .iter()
                .map(|a| a.generator.as_ref().map(|g| make(g, config.lr_actor)))
                .collect(),
            coordinator: model
                .coordinator
                .as_ref()
                .map(|c| make(c, config.lr_actor)),
            critics: model
                .critics
                .iter()
                .map(|c| make(c, config.lr_critic))
                .collect(),
        }
    }

    pub(crate) fn apply_policy(&mut self, model: &mut MultiAgentModel, grads: &PolicyGrads) -> Result<()> {
        if grads.actors.iter().any(|g| !g.all_finite())
            || grads.generators.iter().flatten().any(|g| !g.all_finite())
            || grads.coordinator.as_ref().is_some_and(|g| !g.all_finite())
        {
            return Err(crate::nn::NnError::NonFinite("policy gradient").into());
        }
        for (i, agent) in model.agents.iter_mut().enumerate() {
            self.actors[i].apply(&mut agent.actor.params, &grads.actors[i])?;
            if let (Some(net), Some(opt), Some(g)) = (
                agent.generator.as_mut(),
                self.generators[i].as_mut(),
                grads.generators[i].as_ref(),
            ) {
                opt.apply(&mut net.params, g)?;
            }
        }
        if let (Some(net), Some(opt), Some(g)) = (
            model.coordinator.as_mut(),
            self.coordinator.as_mut(),
            grads.coordinator.as_ref(),
        ) {
            opt.apply(&mut net.params, g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
}

/// Owns online and target networks, their optimizers and the replay buffer.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainerConfig,
    pub online: MultiAgentModel,
    pub target: MultiAgentModel,
    pub optimizers: Optimizers,
    pub buffer: ReplayBuffer,
    pub updates: u64,
    explore_rng: RunRng,
    replay_rng: RunRng,
}

impl Trainer {
    pub fn new(
        wiring: Wiring,
        obs_widths: Vec<usize>,
        action_widths: Vec<usize>,
        config: TrainerConfig,
        seed: u64,
    ) -> Result<Self> {
        let violations = config.violations();
        if !violations.is_empty() {
            return Err(Error::Config(violations));
        }
        let mut init = rng::stream(seed, Stream::Init);
        let online = MultiAgentModel::new(
            wiring,
            obs_widths,
            action_widths,
            config.message_width,
            &config.hidden,
            &mut init,
        )?;
        Ok(Self::from_parts(config, online, None, None, seed))
    }

    /// Sizes the model for `env`.
    pub fn for_env(wiring: Wiring, env: &RoutingEnv, config: TrainerConfig, seed: u64) -> Result<Self> {
        Self::for_topology(wiring, env.topology(), config, seed)
    }

    pub fn for_topology(wiring: Wiring, topology: &Topology, config: TrainerConfig, seed: u64) -> Result<Self> {
        let n = topology.num_agents();
        let obs_widths = (0..n).map(|a| topology.feature_width(a)).collect();
        let action_widths = (0..n).map(|a| topology.num_paths(a)).collect();
        Self::new(wiring, obs_widths, action_widths, config, seed)
    }

    /// Reassembles a trainer, e.g. from a checkpoint. Missing targets start
    /// as copies of the online networks, missing optimizers fresh.
    pub fn from_parts(
        config: TrainerConfig,
        online: MultiAgentModel,
        target: Option<MultiAgentModel>,
        optimizers: Option<Optimizers>,
        seed: u64,
    ) -> Self {
        let target = target.unwrap_or_else(|| online.clone());
        let optimizers = optimizers.unwrap_or_else(|| Optimizers::new(&online, &config));
        Self {
            buffer: ReplayBuffer::new(config.replay_capacity),
            explore_rng: rng::stream(seed, Stream::Explore),
            replay_rng: rng::stream(seed, Stream::Replay),
            updates: 0,
            config,
            online,
            target,
            optimizers,
        }
    }

    pub fn act(&mut self, obs: &[Vec<f64>], noise_sigma: Option<f64>) -> Result<ActOutput> {
        match noise_sigma {
            Some(sigma) if sigma > 0.0 => {
                acml_act(&self.online, obs, Some((sigma, &mut self.explore_rng)))
            }
            _ => acml_act::<RunRng>(&self.online, obs, None),
        }
    }

    /// `y = r + gamma * Q'(o', a')`, with `a'` from the target pipeline.
    /// One target vector per critic.
    pub fn td_targets(&self, batch: &Batch) -> Result<Vec<Array1<f64>>> {
        td_targets(&self.target, batch, self.config.gamma)
    }

    /// One optimizer step on every critic; returns the mean pre-step loss.
    pub fn train_critic(&mut self, batch: &Batch) -> Result<f64> {
        let targets = self.td_targets(batch)?;
        let (losses, grads) =
            self.online
                .critic_loss_grads(&batch.observations, &batch.actions, &targets)?;
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if !loss.is_finite() {
            return Err(crate::nn::NnError::NonFinite("critic loss").into());
        }
        for ((critic, opt), g) in self
            .online
            .critics
            .iter_mut()
            .zip(&mut self.optimizers.critics)
            .zip(&grads)
        {
            opt.apply(&mut critic.params, g)?;
        }
        Ok(loss)
    }

    /// One ascent step on actors and message networks through the critic(s).
    /// Returns per-agent gradient norms.
    pub fn train_actors(&mut self, batch: &Batch) -> Result<Vec<f64>> {
        let (_, grads) = self
            .online
            .actor_loss_grads_reg(&batch.observations, self.config.logit_reg)?;
        self.optimizers.apply_policy(&mut self.online, &grads)?;
        Ok((0..self.online.num_agents())
            .map(|i| grads.agent_norm(i))
            .collect())
    }

    pub fn update_targets(&mut self) -> Result<()> {
        let tau = match self.config.target_hard_period {
            Some(period) if self.updates % period == 0 => 1.0,
            Some(_) => return Ok(()),
            None => self.config.tau,
        };
        for (t, o) in self
            .target
            .networks_mut()
            .into_iter()
            .zip(self.online.networks())
        {
            crate::nn::TargetLink::blend_into(&mut t.params, &o.1.params, tau)?;
        }
        Ok(())
    }

    /// Sample, train critic, train actors, move targets.
    pub fn update(&mut self) -> Result<Option<UpdateStats>> {
        let Some(batch) = self.buffer.sample(self.config.batch_size, &mut self.replay_rng) else {
            return Ok(None);
        };
        let critic_loss = self.train_critic(&batch)?;
        self.train_actors(&batch)?;
        self.updates += 1;
        self.update_targets()?;
        Ok(Some(UpdateStats { critic_loss }))
    }
}

pub fn td_targets(target: &MultiAgentModel, batch: &Batch, gamma: f64) -> Result<Vec<Array1<f64>>> {
    let pass = target.policy_forward(&batch.next_observations, None)?;
    let q = target.q_values(&batch.next_observations, &pass.actions)?;
    Ok(q.into_iter().map(|q| &batch.rewards + &(q * gamma)).collect())
}

/// Per-step training record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    pub rewards: Vec<f64>,
    pub mlus: Vec<f64>,
}

impl TrainingCurve {
    /// Mean reward over the last `fraction` of steps.
    pub fn final_window_reward(&self, fraction: f64) -> f64 {
        let n = self.rewards.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        self.rewards[n - k..].iter().sum::<f64>() / k as f64
    }
}

pub struct TrainingOutcome {
    pub trainer: Trainer,
    pub curve: TrainingCurve,
    pub messages_sent: u64,
}

/// Interleaves environment steps with batched updates for
/// `config.training_steps` steps.
pub fn run_training(
    env: &mut RoutingEnv,
    wiring: Wiring,
    config: TrainerConfig,
    seed: u64,
) -> Result<TrainingOutcome> {
    let trainer = Trainer::for_env(wiring, env, config, seed)?;
    continue_training(env, trainer, seed)
}

pub fn continue_training(env: &mut RoutingEnv, mut trainer: Trainer, seed: u64) -> Result<TrainingOutcome> {
    let cfg = trainer.config.clone();
    let n = env.num_agents();
    let mut curve = TrainingCurve {
        rewards: Vec::with_capacity(cfg.training_steps),
        mlus: Vec::with_capacity(cfg.training_steps),
    };
    let mut messages_sent = 0u64;
    let mut episode = 0u64;
    env.reset(rng::episode_seed(seed, Stream::Episodes, episode));
    let mut obs = env.features_all();
    for step in 0..cfg.training_steps {
        if step > 0 && step % cfg.episode_len == 0 {
            episode += 1;
            env.reset(rng::episode_seed(seed, Stream::Episodes, episode));
            obs = env.features_all();
        }
        let out = trainer
            .act(&obs, Some(cfg.noise_at(step)))
            .map_err(|e| e.at_step(step))?;
        if trainer.online.communicates() {
            messages_sent += n as u64;
        }
        let result = env.step(&out.actions)?;
        let next_obs = env.features_all();
        curve.rewards.push(result.reward);
        curve.mlus.push(result.mlu);
        trainer.buffer.push(JointExperience {
            observations: obs,
            actions: out.actions,
            reward: result.reward,
            next_observations: next_obs.clone(),
        });
        if step >= cfg.warmup_steps && (step - cfg.warmup_steps) % cfg.train_every == 0 {
            trainer.update().map_err(|e| e.at_step(step))?;
        }
        obs = next_obs;
    }
    if !trainer.online.all_finite() {
        return Err(Error::Numeric {
            step: cfg.training_steps,
            source: crate::nn::NnError::NonFinite("parameters"),
        });
    }
    Ok(TrainingOutcome {
        trainer,
        curve,
        messages_sent,
    })
}

/// Stacks a slice of equal-width rows into a matrix.
pub fn stack_rows(items: &[Vec<f64>]) -> Array2<f64> {
    let w = items.first().map_or(0, Vec::len);
    Array2::from_shape_fn((items.len(), w), |(r, c)| items[r][c])
}
