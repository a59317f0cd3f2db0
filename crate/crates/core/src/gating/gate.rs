use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Mlp, MlpSpec, NnError, OptimizerState};
use crate::Result;

/// Probability cut-off: a gate opens only when `p > GATE_CUTOFF`.
pub const GATE_CUTOFF: f64 = 0.5;

/// Clamp applied to `p` inside the cross-entropy logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Maps one agent's observation to the probability that its message is
/// worth sending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingNet {
    pub net: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub p: f64,
    pub g: bool,
}

impl GateDecision {
    pub fn from_probability(p: f64) -> Self {
        Self {
            p,
            g: p > GATE_CUTOFF,
        }
    }
}

impl GatingNet {
    pub fn spec(obs_width: usize, hidden: &[usize]) -> Result<MlpSpec> {
        Ok(MlpSpec::with_hidden(
            obs_width,
            hidden,
            1,
            Activation::Relu,
            Activation::Sigmoid,
        )?)
    }

    pub fn new<R: Rng + ?Sized>(obs_width: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        Ok(Self {
            net: Mlp::new(Self::spec(obs_width, hidden)?, rng),
        })
    }

    /// All-zero parameters: `p = 0.5` everywhere, so every gate starts shut.
    pub fn zeros(obs_width: usize, hidden: &[usize]) -> Result<Self> {
        Ok(Self {
            net: Mlp::zeros(Self::spec(obs_width, hidden)?),
        })
    }

    pub fn obs_width(&self) -> usize {
        self.net.spec.input_width()
    }

    pub fn probabilities(&self, obs: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.net.predict(obs)?.column(0).to_owned())
    }

    pub fn decide(&self, obs: &[f64]) -> Result<GateDecision> {
        let p = self.net.forward_one(obs)?[0];
        Ok(GateDecision::from_probability(p))
    }
}

pub fn gate(net: &GatingNet, obs: &[f64]) -> Result<GateDecision> {
    net.decide(obs)
}

/// The message as it leaves the agent: unchanged when open, zeros when shut.
pub fn apply_gate(message: &[f64], g: bool) -> Vec<f64> {
    if g {
        message.to_vec()
    } else {
        vec![0.0; message.len()]
    }
}

/// Auxiliary-task label: communicate iff the message is worth more than `t`.
pub fn label(delta_q: f64, t: f64) -> bool {
    delta_q > t
}

/// Mean binary cross-entropy with `p` clamped into `[1e-7, 1 - 1e-7]`.
pub fn bce(p: &Array1<f64>, labels: &[bool]) -> f64 {
    let lo = PROB_CLAMP;
    let hi = 1.0 - PROB_CLAMP;
    let total: f64 = p
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(lo, hi);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / labels.len() as f64
}

/// Cross-entropy loss of `net` on `(obs, labels)` and its parameter gradient.
/// The gradient is taken at the sigmoid's input, where it is `(p - y) / B`;
/// this equals the derivative of the clamped loss wherever the clamp is
/// inactive and does not vanish on confidently wrong samples.
pub fn gating_loss_grads(
    net: &GatingNet,
    obs: ArrayView2<f64>,
    labels: &[bool],
) -> Result<(f64, crate::nn::ParamSet)> {
    if obs.nrows() != labels.len() || labels.is_empty() {
        return Err(NnError::DimensionMismatch {
            what: "gate labels",
            expected: obs.nrows(),
            got: labels.len(),
        }
        .into());
    }
    let (out, cache) = net.net.forward(obs)?;
    let p = out.column(0).to_owned();
    let loss = bce(&p, labels);
    if !loss.is_finite() {
        return Err(NnError::NonFinite("gating loss").into());
    }
    let b = labels.len() as f64;
    let dz = Array2::from_shape_fn((labels.len(), 1), |(r, _)| {
        (p[r] - if labels[r] { 1.0 } else { 0.0 }) / b
    });
    let zero = Array2::zeros((labels.len(), 1));
    let (grads, _) = net
        .net
        .backward_with_logit_grad(&cache, zero.view(), dz.view())?;
    Ok((loss, grads))
}

/// One optimizer step on the gate; returns the pre-step loss.
pub fn gating_loss(
    net: &mut GatingNet,
    optimizer: &mut OptimizerState,
    obs: ArrayView2<f64>,
    labels: &[bool],
) -> Result<f64> {
    let (loss, grads) = gating_loss_grads(net, obs, labels)?;
    optimizer.apply(&mut net.net.params, &grads)?;
    Ok(loss)
}
