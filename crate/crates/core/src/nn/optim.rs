use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{MlpParams, NnError, ParamSet, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam(AdamConfig),
}

/// Optimizer for one parameter set. Moments are only kept for Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub step: u64,
    first_moment: Option<ParamSet>,
    second_moment: Option<ParamSet>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            step: 0,
            first_moment: None,
            second_moment: None,
        }
    }

    pub fn adam(learning_rate: f64, params: &MlpParams) -> Self {
        Self::adam_with(learning_rate, AdamConfig::default(), params)
    }

    pub fn adam_with(learning_rate: f64, config: AdamConfig, params: &MlpParams) -> Self {
        Self {
            kind: OptimizerKind::Adam(config),
            learning_rate,
            step: 0,
            first_moment: Some(ParamSet::zeros_like(params.set())),
            second_moment: Some(ParamSet::zeros_like(params.set())),
        }
    }

    pub fn moments(&self) -> Option<(&ParamSet, &ParamSet)> {
        self.first_moment.as_ref().zip(self.second_moment.as_ref())
    }

    /// One descent step. Non-finite gradients leave everything untouched.
    pub fn apply(&mut self, params: &mut MlpParams, grads: &ParamSet) -> Result<()> {
        if !params.set().same_shape(grads) {
            return Err(NnError::InvalidSpec(
                "gradient shapes do not match parameters".into(),
            ));
        }
        if !grads.all_finite() {
            return Err(NnError::NonFinite("gradient"));
        }
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                params.set_mut().add_scaled(grads, -lr);
                self.step += 1;
            }
            OptimizerKind::Adam(cfg) => {
                let m = self.first_moment.as_mut().expect("adam moments");
                let v = self.second_moment.as_mut().expect("adam moments");
                let t = (self.step + 1) as f64;
                let c1 = 1.0 - cfg.beta1.powf(t);
                let c2 = 1.0 - cfg.beta2.powf(t);
                let set = params.set_mut();
                for l in 0..set.weights.len() {
                    Zip::from(&mut set.weights[l])
                        .and(&mut m.weights[l])
                        .and(&mut v.weights[l])
                        .and(&grads.weights[l])
                        .for_each(|p, m, v, &g| adam_update(p, m, v, g, lr, &cfg, c1, c2));
                    Zip::from(&mut set.biases[l])
                        .and(&mut m.biases[l])
                        .and(&mut v.biases[l])
                        .and(&grads.biases[l])
                        .for_each(|p, m, v, &g| adam_update(p, m, v, g, lr, &cfg, c1, c2));
                }
                self.step += 1;
            }
        }
        if !params.set().all_finite() {
            return Err(NnError::NonFinite("parameters after optimizer step"));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn adam_update(p: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64, cfg: &AdamConfig, c1: f64, c2: f64) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let m_hat = *m / c1;
    let v_hat = *v / c2;
    *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
}
