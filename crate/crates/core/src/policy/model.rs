use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, ForwardCache, Mlp, MlpSpec, ParamSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// One critic over every observation and action.
    Central,
    /// Critic `i` sees only `(o_i, a_i)`.
    PerAgent,
}

/// Which communication and critic structure a learner uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wiring {
    pub messages: bool,
    pub critic: CriticKind,
}

impl Wiring {
    pub const ACML: Wiring = Wiring {
        messages: true,
        critic: CriticKind::Central,
    };
    pub const MADDPG: Wiring = Wiring {
        messages: false,
        critic: CriticKind::Central,
    };
    pub const AMP: Wiring = Wiring {
        messages: true,
        critic: CriticKind::PerAgent,
    };
    pub const IND_AC: Wiring = Wiring {
        messages: false,
        critic: CriticKind::PerAgent,
    };
}

/// Per-agent networks: the actor and, when communicating, the message generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentNets {
    pub actor: Mlp,
    pub generator: Option<Mlp>,
}

/// All networks of a multi-agent learner.
///
/// Execution with messages: `m_i = generator_i(o_i)`,
/// `(M_1..M_N) = coordinator(m_1..m_N)`, `a_i = actor_i(o_i ++ M_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiAgentModel {
    pub wiring: Wiring,
    pub obs_widths: Vec<usize>,
    pub action_widths: Vec<usize>,
    pub message_width: usize,
    pub agents: Vec<AgentNets>,
    pub coordinator: Option<Mlp>,
    pub critics: Vec<Mlp>,
}

/// Gradients for every policy-side network.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub actors: Vec<ParamSet>,
    pub generators: Vec<Option<ParamSet>>,
    pub coordinator: Option<ParamSet>,
}

impl PolicyGrads {
    /// Norm of everything that agent `i` owns.
    pub fn agent_norm(&self, agent: usize) -> f64 {
        let a = self.actors[agent].l2_norm().powi(2);
        let g = self.generators[agent]
            .as_ref()
            .map_or(0.0, |g| g.l2_norm().powi(2));
        (a + g).sqrt()
    }
}

/// Trace of one batched pass through the message pipeline and actors.
#[derive(Debug, Clone)]
pub struct PolicyPass {
    generator_caches: Vec<Option<ForwardCache>>,
    coordinator_cache: Option<ForwardCache>,
    actor_caches: Vec<ForwardCache>,
    masks: Option<Vec<Array1<f64>>>,
    /// `m_i` before gating.
    pub local_messages: Vec<Array2<f64>>,
    /// `M_i` as delivered to the actor (zeroed where gated off).
    pub global_messages: Vec<Array2<f64>>,
    pub actions: Vec<Array2<f64>>,
}

impl PolicyPass {
    pub fn actor_logits(&self, agent: usize) -> &Array2<f64> {
        self.actor_caches[agent].logits()
    }
}

fn hcat(parts: &[ArrayView2<f64>]) -> Array2<f64> {
    concatenate(Axis(1), parts).expect("row counts agree")
}

fn mask_rows(m: &mut Array2<f64>, mask: &Array1<f64>) {
    for (mut row, &g) in m.rows_mut().into_iter().zip(mask) {
        if g == 0.0 {
            row.fill(0.0);
        } else if g != 1.0 {
            row.mapv_inplace(|x| x * g);
        }
    }
}

fn check_width(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Width {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

impl MultiAgentModel {
    pub fn new<R: Rng + ?Sized>(
        wiring: Wiring,
        obs_widths: Vec<usize>,
        action_widths: Vec<usize>,
        message_width: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let n = obs_widths.len();
        if n == 0 || action_widths.len() != n {
            return Err(Error::Invalid(
                "need one observation and action width per agent".into(),
            ));
        }
        let relu = Activation::Relu;
        let msg_in = if wiring.messages { message_width } else { 0 };
        let mut agents = Vec::with_capacity(n);
        for i in 0..n {
            let actor = Mlp::new(
                MlpSpec::with_hidden(
                    obs_widths[i] + msg_in,
                    hidden,
                    action_widths[i],
                    relu,
                    Activation::Softmax,
                )?,
                rng,
            );
            let generator = if wiring.messages {
                Some(Mlp::new(
                    MlpSpec::with_hidden(obs_widths[i], hidden, message_width, relu, Activation::Tanh)?,
                    rng,
                ))
            } else {
                None
            };
            agents.push(AgentNets { actor, generator });
        }
        let coordinator = if wiring.messages {
            let w = n * message_width;
            Some(Mlp::new(
                MlpSpec::with_hidden(w, hidden, w, relu, Activation::Tanh)?,
                rng,
            ))
        } else {
            None
        };
        let critics = match wiring.critic {
            CriticKind::Central => {
                let w = obs_widths.iter().sum::<usize>() + action_widths.iter().sum::<usize>();
                vec![Mlp::new(
                    MlpSpec::with_hidden(w, hidden, 1, relu, Activation::Identity)?,
                    rng,
                )]
            }
            CriticKind::PerAgent => (0..n)
                .map(|i| {
                    Ok(Mlp::new(
                        MlpSpec::with_hidden(
                            obs_widths[i] + action_widths[i],
                            hidden,
                            1,
                            relu,
                            Activation::Identity,
                        )?,
                        rng,
                    ))
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            wiring,
            obs_widths,
            action_widths,
            message_width,
            agents,
            coordinator,
            critics,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn communicates(&self) -> bool {
        self.wiring.messages
    }

    fn check_obs(&self, obs: &[Array2<f64>]) -> Result<()> {
        check_width("agent count", self.num_agents(), obs.len())?;
        for (o, &w) in obs.iter().zip(&self.obs_widths) {
            check_width("observation", w, o.ncols())?;
        }
        Ok(())
    }

    /// Full execution pipeline on a batch. `masks[i][b]` multiplies agent
    /// `i`'s outgoing `m_i` and incoming `M_i` for sample `b`; `None` means
    /// every gate is open.
    pub fn policy_forward(
        &self,
        obs: &[Array2<f64>],
        masks: Option<&[Array1<f64>]>,
    ) -> Result<PolicyPass> {
        self.check_obs(obs)?;
        let n = self.num_agents();
        let batch = obs[0].nrows();
        if let Some(masks) = masks {
            check_width("gate masks", n, masks.len())?;
        }
        let mut generator_caches = Vec::with_capacity(n);
        let mut local_messages = Vec::with_capacity(n);
        let mut global_messages = Vec::with_capacity(n);
        let mut coordinator_cache = None;
        if let Some(coord) = &self.coordinator {
            let mut sent = Vec::with_capacity(n);
            for (i, agent) in self.agents.iter().enumerate() {
                let generator = agent.generator.as_ref().expect("message wiring");
                let (m, cache) = generator.forward(obs[i].view())?;
                let mut m_sent = m.clone();
                if let Some(masks) = masks {
                    mask_rows(&mut m_sent, &masks[i]);
                }
                generator_caches.push(Some(cache));
                local_messages.push(m);
                sent.push(m_sent);
            }
            let views: Vec<_> = sent.iter().map(|m| m.view()).collect();
            let (all, cache) = coord.forward(hcat(&views).view())?;
            coordinator_cache = Some(cache);
            let w = self.message_width;
            for i in 0..n {
                let mut mi = all.slice(s![.., i * w..(i + 1) * w]).to_owned();
                if let Some(masks) = masks {
                    mask_rows(&mut mi, &masks[i]);
                }
                global_messages.push(mi);
            }
        } else {
            for _ in 0..n {
                generator_caches.push(None);
                local_messages.push(Array2::zeros((batch, 0)));
                global_messages.push(Array2::zeros((batch, 0)));
            }
        }
        let mut actor_caches = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        for (i, agent) in self.agents.iter().enumerate() {
            let input = hcat(&[obs[i].view(), global_messages[i].view()]);
            let (a, cache) = agent.actor.forward(input.view())?;
            actor_caches.push(cache);
            actions.push(a);
        }
        Ok(PolicyPass {
            generator_caches,
            coordinator_cache,
            actor_caches,
            masks: masks.map(|m| m.to_vec()),
            local_messages,
            global_messages,
            actions,
        })
    }

    /// Actions of agent `i` given an explicit incoming message.
    pub fn actor_with_message(
        &self,
        agent: usize,
        obs: ArrayView2<f64>,
        message: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let input = hcat(&[obs, message]);
        Ok(self.agents[agent].actor.predict(input.view())?)
    }

    /// Backpropagates `dL/da_i` through actors, coordinator and generators.
    pub fn policy_backward(&self, pass: &PolicyPass, action_grads: &[Array2<f64>]) -> Result<PolicyGrads> {
        self.policy_backward_reg(pass, action_grads, 0.0)
    }

    /// [`Self::policy_backward`] plus the gradient of
    /// `logit_reg * mean(z^2)` on every actor's pre-softmax logits `z`.
    pub fn policy_backward_reg(
        &self,
        pass: &PolicyPass,
        action_grads: &[Array2<f64>],
        logit_reg: f64,
    ) -> Result<PolicyGrads> {
        let n = self.num_agents();
        check_width("action gradients", n, action_grads.len())?;
        let mut actors = Vec::with_capacity(n);
        let mut message_grads = Vec::with_capacity(n);
        for (i, agent) in self.agents.iter().enumerate() {
            let (g, din) = if logit_reg > 0.0 {
                let z = pass.actor_logits(i);
                let dz = z * (2.0 * logit_reg / z.len() as f64);
                agent
                    .actor
                    .backward_with_logit_grad(&pass.actor_caches[i], action_grads[i].view(), dz.view())?
            } else {
                agent
                    .actor
                    .backward(&pass.actor_caches[i], action_grads[i].view())?
            };
            actors.push(g);
            let mut dm = din.slice(s![.., self.obs_widths[i]..]).to_owned();
            if let Some(masks) = &pass.masks {
                mask_rows(&mut dm, &masks[i]);
            }
            message_grads.push(dm);
        }
        let Some(coord) = &self.coordinator else {
            return Ok(PolicyGrads {
                actors,
                generators: vec![None; n],
                coordinator: None,
            });
        };
        let views: Vec<_> = message_grads.iter().map(|m| m.view()).collect();
        let cache = pass.coordinator_cache.as_ref().expect("coordinator trace");
        let (coord_grads, dlocal) = coord.backward(cache, hcat(&views).view())?;
        let w = self.message_width;
        let mut generators = Vec::with_capacity(n);
        for (i, agent) in self.agents.iter().enumerate() {
            let mut dm = dlocal.slice(s![.., i * w..(i + 1) * w]).to_owned();
            if let Some(masks) = &pass.masks {
                mask_rows(&mut dm, &masks[i]);
            }
            let generator = agent.generator.as_ref().expect("message wiring");
            let gen_cache = pass.generator_caches[i].as_ref().expect("generator trace");
            let (g, _) = generator.backward(gen_cache, dm.view())?;
            generators.push(Some(g));
        }
        Ok(PolicyGrads {
            actors,
            generators,
            coordinator: Some(coord_grads),
        })
    }

    /// Input matrix for critic `k`: all observations then all actions for the
    /// central critic, `(o_k, a_k)` for per-agent critics.
    pub fn critic_input(&self, k: usize, obs: &[Array2<f64>], actions: &[Array2<f64>]) -> Array2<f64> {
        match self.wiring.critic {
            CriticKind::Central => {
                let views: Vec<_> = obs.iter().chain(actions).map(|m| m.view()).collect();
                hcat(&views)
            }
            CriticKind::PerAgent => hcat(&[obs[k].view(), actions[k].view()]),
        }
    }

    /// `Q_k(o, a)` for every critic.
    pub fn q_values(&self, obs: &[Array2<f64>], actions: &[Array2<f64>]) -> Result<Vec<Array1<f64>>> {
        self.check_obs(obs)?;
        check_width("agent count", self.num_agents(), actions.len())?;
        for (a, &w) in actions.iter().zip(&self.action_widths) {
            check_width("action", w, a.ncols())?;
        }
        self.critics
            .iter()
            .enumerate()
            .map(|(k, critic)| {
                let out = critic.predict(self.critic_input(k, obs, actions).view())?;
                Ok(out.column(0).to_owned())
            })
            .collect()
    }

    /// Mean squared TD error per critic and its gradients.
    pub fn critic_loss_grads(
        &self,
        obs: &[Array2<f64>],
        actions: &[Array2<f64>],
        targets: &[Array1<f64>],
    ) -> Result<(Vec<f64>, Vec<ParamSet>)> {
        check_width("critic targets", self.critics.len(), targets.len())?;
        let mut losses = Vec::with_capacity(self.critics.len());
        let mut grads = Vec::with_capacity(self.critics.len());
        for (k, critic) in self.critics.iter().enumerate() {
            let (q, cache) = critic.forward(self.critic_input(k, obs, actions).view())?;
            let b = q.nrows() as f64;
            let delta = &q.column(0) - &targets[k];
            losses.push(delta.mapv(|d| d * d).sum() / b);
            let dq = delta.mapv(|d| 2.0 * d / b).insert_axis(Axis(1));
            let (g, _) = critic.backward(&cache, dq.view())?;
            grads.push(g);
        }
        Ok((losses, grads))
    }

    /// Actor objective `-sum_k mean_b Q_k(o, pi(o))` with gradients for every
    /// policy-side network. Critic parameters are not differentiated.
    pub fn actor_loss_grads(&self, obs: &[Array2<f64>]) -> Result<(f64, PolicyGrads)> {
        self.actor_loss_grads_reg(obs, 0.0)
    }

    /// Actor objective plus `logit_reg * mean(z_i^2)` per actor.
    pub fn actor_loss_grads_reg(&self, obs: &[Array2<f64>], logit_reg: f64) -> Result<(f64, PolicyGrads)> {
        let pass = self.policy_forward(obs, None)?;
        let batch = obs[0].nrows() as f64;
        let n = self.num_agents();
        let mut action_grads: Vec<Array2<f64>> = pass
            .actions
            .iter()
            .map(|a| Array2::zeros(a.raw_dim()))
            .collect();
        let mut loss = 0.0;
        for (k, critic) in self.critics.iter().enumerate() {
            let (q, cache) = critic.forward(self.critic_input(k, obs, &pass.actions).view())?;
            loss -= q.sum() / batch;
            let dq = Array2::from_elem(q.raw_dim(), -1.0 / batch);
            let (_, din) = critic.backward(&cache, dq.view())?;
            match self.wiring.critic {
                CriticKind::Central => {
                    let mut offset: usize = self.obs_widths.iter().sum();
                    for i in 0..n {
                        let w = self.action_widths[i];
                        action_grads[i] += &din.slice(s![.., offset..offset + w]);
                        offset += w;
                    }
                }
                CriticKind::PerAgent => {
                    let o = self.obs_widths[k];
                    action_grads[k] += &din.slice(s![.., o..]);
                }
            }
        }
        for i in 0..n {
            let z = pass.actor_logits(i);
            loss += logit_reg * z.mapv(|x| x * x).sum() / z.len() as f64;
        }
        let grads = self.policy_backward_reg(&pass, &action_grads, logit_reg)?;
        Ok((loss, grads))
    }

    /// Every network with a stable name, for checkpoints and bulk updates.
    pub fn networks(&self) -> Vec<(String, &Mlp)> {
        let mut out = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            out.push((format!("actor{i}"), &a.actor));
            if let Some(g) = &a.generator {
                out.push((format!("generator{i}"), g));
            }
        }
        if let Some(c) = &self.coordinator {
            out.push(("coordinator".into(), c));
        }
        for (k, c) in self.critics.iter().enumerate() {
            out.push((format!("critic{k}"), c));
        }
        out
    }

    pub fn networks_mut(&mut self) -> Vec<&mut Mlp> {
        let mut out = Vec::new();
        for a in &mut self.agents {
            out.push(&mut a.actor);
            if let Some(g) = &mut a.generator {
                out.push(g);
            }
        }
        if let Some(c) = &mut self.coordinator {
            out.push(c);
        }
        for c in &mut self.critics {
            out.push(c);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.networks().iter().all(|(_, m)| m.params.set().all_finite())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, net) in self.networks() {
            net.validate()
                .map_err(|e| Error::Invalid(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

/// Single-row matrices from per-agent vectors.
pub fn rows(vectors: &[Vec<f64>]) -> Vec<Array2<f64>> {
    vectors
        .iter()
        .map(|v| Array2::from_shape_vec((1, v.len()), v.clone()).expect("row vector"))
        .collect()
}
