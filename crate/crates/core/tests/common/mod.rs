//! Oracles shared by the integration tests. Nothing here calls into the
//! library's forward or backward code: networks are re-evaluated with plain
//! loops and differentiated numerically.

#![allow(dead_code)]

use gacml_core::env::Topology;
use gacml_core::gating::GatingNet;
use gacml_core::nn::{Activation, Mlp, ParamSet};
use gacml_core::policy::{CriticKind, MultiAgentModel, PolicyGrads, Wiring};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Forward trace: the output, the output layer's pre-activation and the sign
/// pattern of every ReLU unit (to detect finite differences across a kink).
pub struct Trace {
    pub out: Vec<f64>,
    pub logits: Vec<f64>,
    pub relu_signs: Vec<bool>,
}

pub fn ref_forward(net: &Mlp, x: &[f64], signs: &mut Vec<bool>) -> Trace {
    let set = net.params.set();
    let mut h = x.to_vec();
    let mut logits = Vec::new();
    for (l, act) in net.spec.activations.iter().enumerate() {
        let w = &set.weights[l];
        let b = &set.biases[l];
        let mut z: Vec<f64> = (0..w.ncols())
            .map(|j| b[j] + (0..w.nrows()).map(|i| h[i] * w[[i, j]]).sum::<f64>())
            .collect();
        logits = z.clone();
        match act {
            Activation::Relu => {
                for v in z.iter_mut() {
                    signs.push(*v > 0.0);
                    *v = v.max(0.0);
                }
            }
            Activation::Sigmoid => z.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Identity => {}
            Activation::Softmax => {
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                z = e.iter().map(|v| v / s).collect();
            }
        }
        h = z;
    }
    Trace {
        out: h,
        logits,
        relu_signs: signs.clone(),
    }
}

pub fn ref_predict(net: &Mlp, x: &[f64]) -> Vec<f64> {
    ref_forward(net, x, &mut Vec::new()).out
}

/// Joint observations `[agent][sample][feature]`.
pub type JointObs = Vec<Vec<Vec<f64>>>;

pub struct PipelineEval {
    pub actions: Vec<Vec<Vec<f64>>>,
    pub logits: Vec<Vec<Vec<f64>>>,
    pub signs: Vec<bool>,
}

/// The message pipeline evaluated sample by sample.
pub fn ref_pipeline(model: &MultiAgentModel, obs: &JointObs) -> PipelineEval {
    let n = model.agents.len();
    let batch = obs[0].len();
    let mut signs = Vec::new();
    let mut actions = vec![Vec::new(); n];
    let mut logits = vec![Vec::new(); n];
    for b in 0..batch {
        let global: Vec<Vec<f64>> = match &model.coordinator {
            Some(coord) => {
                let mut cat = Vec::new();
                for i in 0..n {
                    let g = model.agents[i].generator.as_ref().unwrap();
                    cat.extend(ref_forward(g, &obs[i][b], &mut signs).out);
                }
                let all = ref_forward(coord, &cat, &mut signs).out;
                let w = model.message_width;
                (0..n).map(|i| all[i * w..(i + 1) * w].to_vec()).collect()
            }
            None => vec![Vec::new(); n],
        };
        for i in 0..n {
            let mut input = obs[i][b].clone();
            input.extend(&global[i]);
            let t = ref_forward(&model.agents[i].actor, &input, &mut signs);
            actions[i].push(t.out);
            logits[i].push(t.logits);
        }
    }
    PipelineEval {
        actions,
        logits,
        signs,
    }
}

pub fn ref_critic_input(model: &MultiAgentModel, k: usize, obs: &JointObs, actions: &[Vec<Vec<f64>>], b: usize) -> Vec<f64> {
    match model.wiring.critic {
        CriticKind::Central => {
            let mut x = Vec::new();
            for o in obs {
                x.extend(&o[b]);
            }
            for a in actions {
                x.extend(&a[b]);
            }
            x
        }
        CriticKind::PerAgent => {
            let mut x = obs[k][b].clone();
            x.extend(&actions[k][b]);
            x
        }
    }
}

/// `-sum_k mean_b Q_k(o, pi(o)) + reg * sum_i mean(z_i^2)` and its ReLU signs.
pub fn ref_actor_loss(model: &MultiAgentModel, obs: &JointObs, logit_reg: f64) -> (f64, Vec<bool>) {
    let eval = ref_pipeline(model, obs);
    let mut signs = eval.signs;
    let batch = obs[0].len();
    let mut loss = 0.0;
    for (k, critic) in model.critics.iter().enumerate() {
        for b in 0..batch {
            let x = ref_critic_input(model, k, obs, &eval.actions, b);
            loss -= ref_forward(critic, &x, &mut signs).out[0] / batch as f64;
        }
    }
    for z in &eval.logits {
        let count = z.len() * z[0].len();
        let sq: f64 = z.iter().flatten().map(|v| v * v).sum();
        loss += logit_reg * sq / count as f64;
    }
    (loss, signs)
}

/// Mean squared TD error of critic `k` against fixed targets.
pub fn ref_critic_loss(model: &MultiAgentModel, k: usize, obs: &JointObs, actions: &[Vec<Vec<f64>>], y: &[f64]) -> (f64, Vec<bool>) {
    let mut signs = Vec::new();
    let batch = y.len();
    let mut loss = 0.0;
    for b in 0..batch {
        let x = ref_critic_input(model, k, obs, actions, b);
        let q = ref_forward(&model.critics[k], &x, &mut signs).out[0];
        loss += (q - y[b]).powi(2) / batch as f64;
    }
    (loss, signs)
}

/// Unclamped binary cross-entropy of a gate.
pub fn ref_gate_loss(gate: &GatingNet, obs: &[Vec<f64>], labels: &[bool]) -> (f64, Vec<bool>) {
    let mut signs = Vec::new();
    let mut loss = 0.0;
    for (x, &y) in obs.iter().zip(labels) {
        let p = ref_forward(&gate.net, x, &mut signs).out[0];
        loss -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    (loss / labels.len() as f64, signs)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Central difference of `loss` in coordinate `idx` of the network chosen by
/// `pick`. Returns `None` when the step moves a ReLU across its kink.
pub fn central_difference<F, P>(model: &MultiAgentModel, pick: P, idx: usize, loss: F) -> Option<f64>
where
    F: Fn(&MultiAgentModel) -> (f64, Vec<bool>),
    P: Fn(&mut MultiAgentModel) -> &mut Mlp,
{
    let (_, base_signs) = loss(model);
    let mut plus = model.clone();
    *pick(&mut plus).params.set_mut().iter_mut().nth(idx).unwrap() += FD_STEP;
    let mut minus = model.clone();
    *pick(&mut minus).params.set_mut().iter_mut().nth(idx).unwrap() -= FD_STEP;
    let (lp, sp) = loss(&plus);
    let (lm, sm) = loss(&minus);
    (sp == base_signs && sm == base_signs).then(|| (lp - lm) / (2.0 * FD_STEP))
}

pub fn nth_param(set: &ParamSet, idx: usize) -> f64 {
    *set.iter().nth(idx).unwrap()
}

/// A small random model and batch for one gradient-check draw.
pub fn random_instance(wiring: Wiring, seed: u64) -> (MultiAgentModel, JointObs) {
    let mut r = rng(seed);
    let n = r.random_range(2..=3);
    let obs_widths: Vec<usize> = (0..n).map(|_| r.random_range(2..=5)).collect();
    let action_widths: Vec<usize> = (0..n).map(|_| r.random_range(2..=3)).collect();
    let message_width = r.random_range(2..=4);
    let hidden = [r.random_range(3..=6), r.random_range(2..=5)];
    let mut model =
        MultiAgentModel::new(wiring, obs_widths.clone(), action_widths, message_width, &hidden, &mut r).unwrap();
    // Scale weights up a little so gradients are not vanishingly small.
    for net in model.networks_mut() {
        for w in net.params.set_mut().iter_mut() {
            *w *= 1.5;
        }
    }
    let batch = r.random_range(1..=4);
    let obs = obs_widths
        .iter()
        .map(|&w| (0..batch).map(|_| (0..w).map(|_| r.random_range(-1.0..1.0)).collect()).collect())
        .collect();
    (model, obs)
}

pub fn to_arrays(obs: &JointObs) -> Vec<Array2<f64>> {
    obs.iter()
        .map(|rows| {
            let w = rows[0].len();
            Array2::from_shape_fn((rows.len(), w), |(r, c)| rows[r][c])
        })
        .collect()
}

/// Policy-side gradient of the network chosen by `role`.
pub enum PolicyRole {
    Actor(usize),
    Generator(usize),
    Coordinator,
}

pub fn policy_grad<'a>(g: &'a PolicyGrads, role: &PolicyRole) -> &'a ParamSet {
    match *role {
        PolicyRole::Actor(i) => &g.actors[i],
        PolicyRole::Generator(i) => g.generators[i].as_ref().unwrap(),
        PolicyRole::Coordinator => g.coordinator.as_ref().unwrap(),
    }
}

pub fn policy_net<'a>(m: &'a mut MultiAgentModel, role: &PolicyRole) -> &'a mut Mlp {
    match *role {
        PolicyRole::Actor(i) => &mut m.agents[i].actor,
        PolicyRole::Generator(i) => m.agents[i].generator.as_mut().unwrap(),
        PolicyRole::Coordinator => m.coordinator.as_mut().unwrap(),
    }
}

/// Maximum relative error over `coords` random coordinates of one draw.
pub fn check_policy_role(seed: u64, wiring: Wiring, role_of: impl Fn(usize) -> PolicyRole, coords: usize) -> f64 {
    let (model, obs) = random_instance(wiring, seed);
    let mut r = rng(seed ^ 0xabcd);
    let n = model.agents.len();
    let role = role_of(r.random_range(0..n));
    let reg = if seed % 2 == 0 { 0.0 } else { 0.05 };
    let (_, grads) = model.actor_loss_grads_reg(&to_arrays(&obs), reg).unwrap();
    let analytic = policy_grad(&grads, &role).clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < coords && attempts < coords * 20 {
        attempts += 1;
        let idx = r.random_range(0..analytic.len());
        let numeric = central_difference(&model, |m| policy_net(m, &role), idx, |m| ref_actor_loss(m, &obs, reg));
        if let Some(numeric) = numeric {
            worst = worst.max(rel_err(nth_param(&analytic, idx), numeric));
            checked += 1;
        }
    }
    assert!(checked > 0, "every coordinate crossed a kink");
    worst
}

pub fn check_critic_draw(seed: u64, coords: usize) -> f64 {
    let wiring = if seed % 2 == 0 { Wiring::ACML } else { Wiring::AMP };
    let (model, obs) = random_instance(wiring, seed);
    let mut r = rng(seed ^ 0x1234);
    let batch = obs[0].len();
    let actions: Vec<Vec<Vec<f64>>> = model
        .action_widths
        .iter()
        .map(|&w| {
            (0..batch)
                .map(|_| {
                    let raw: Vec<f64> = (0..w).map(|_| r.random_range(0.01..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / s).collect()
                })
                .collect()
        })
        .collect();
    let y: Vec<f64> = (0..batch).map(|_| r.random_range(-2.0..2.0)).collect();
    let targets: Vec<ndarray::Array1<f64>> = (0..model.critics.len())
        .map(|_| ndarray::Array1::from(y.clone()))
        .collect();
    let (_, grads) = model
        .critic_loss_grads(&to_arrays(&obs), &to_arrays(&actions), &targets)
        .unwrap();
    let k = r.random_range(0..model.critics.len());
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..coords * 20 {
        if checked == coords {
            break;
        }
        let idx = r.random_range(0..grads[k].len());
        let numeric = central_difference(&model, |m| &mut m.critics[k], idx, |m| {
            ref_critic_loss(m, k, &obs, &actions, &y)
        });
        if let Some(numeric) = numeric {
            worst = worst.max(rel_err(nth_param(&grads[k], idx), numeric));
            checked += 1;
        }
    }
    assert!(checked > 0);
    worst
}

pub fn check_gate_draw(seed: u64, coords: usize) -> f64 {
    let mut r = rng(seed);
    let width = r.random_range(2..=6);
    let hidden = [r.random_range(3..=6), r.random_range(2..=5)];
    let gate = GatingNet::new(width, &hidden, &mut r).unwrap();
    let batch = r.random_range(1..=5);
    let obs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..width).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let labels: Vec<bool> = (0..batch).map(|_| r.random_bool(0.5)).collect();
    let x = Array2::from_shape_fn((batch, width), |(a, b)| obs[a][b]);
    let (_, grads) = gacml_core::gating::gating_loss_grads(&gate, x.view(), &labels).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..coords * 20 {
        if checked == coords {
            break;
        }
        let idx = r.random_range(0..grads.len());
        let (_, base) = ref_gate_loss(&gate, &obs, &labels);
        let mut plus = gate.clone();
        *plus.net.params.set_mut().iter_mut().nth(idx).unwrap() += FD_STEP;
        let mut minus = gate.clone();
        *minus.net.params.set_mut().iter_mut().nth(idx).unwrap() -= FD_STEP;
        let (lp, sp) = ref_gate_loss(&plus, &obs, &labels);
        let (lm, sm) = ref_gate_loss(&minus, &obs, &labels);
        if sp != base || sm != base {
            continue;
        }
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(nth_param(&grads, idx), numeric));
        checked += 1;
    }
    assert!(checked > 0);
    worst
}

/// MLU by enumerating every link's flow from scratch.
pub fn brute_force_mlu(t: &Topology, demands: &[f64], actions: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (l, link) in t.links.iter().enumerate() {
        let mut flow = 0.0;
        for (i, c) in t.commodities.iter().enumerate() {
            for (k, p) in c.paths.iter().enumerate() {
                // A path may cross a link at most once; count it if it does.
                let uses = p.nodes.windows(2).any(|w| {
                    (w[0] == link.from && w[1] == link.to) || (w[0] == link.to && w[1] == link.from)
                });
                if uses {
                    flow += demands[i] * actions[i][k];
                }
            }
        }
        let _ = l;
        worst = worst.max(flow / link.capacity);
    }
    worst
}

/// A uniformly random point on the simplex with `n` entries.
pub fn random_simplex<R: Rng>(r: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -r.random_range(1e-12..1.0f64).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}
