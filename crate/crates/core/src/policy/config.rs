use serde::{Deserialize, Serialize};

/// Hyperparameters of the actor-critic trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Soft target-update coefficient, applied after every update.
    pub tau: f64,
    /// When set, targets are hard-copied every this many updates instead.
    pub target_hard_period: Option<u64>,
    pub optimizer: OptimizerChoice,
    /// Logit noise std-dev, annealed linearly from `noise_start` to
    /// `noise_end` over the first `noise_anneal_fraction` of training.
    pub noise_start: f64,
    pub noise_end: f64,
    pub noise_anneal_fraction: f64,
    /// Weight of the squared pre-softmax logit penalty in the actor loss.
    pub logit_reg: f64,
    pub message_width: usize,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    pub warmup_steps: usize,
    /// Environment steps per gradient update.
    pub train_every: usize,
    pub training_steps: usize,
    pub episode_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    Adam,
    Sgd,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            batch_size: 128,
            lr_actor: 0.001,
            lr_critic: 0.01,
            tau: 0.001,
            target_hard_period: None,
            optimizer: OptimizerChoice::Adam,
            noise_start: 0.5,
            noise_end: 0.05,
            noise_anneal_fraction: 0.5,
            logit_reg: 1e-3,
            message_width: 8,
            hidden: vec![64, 32],
            replay_capacity: 1_000_000,
            warmup_steps: 1000,
            train_every: 1,
            training_steps: 30_000,
            episode_len: 400,
        }
    }
}

impl TrainerConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            v.push(format!("gamma {} outside [0, 1]", self.gamma));
        }
        for (name, x) in [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic)] {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{name} must be positive"));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            v.push(format!("tau {} outside (0, 1]", self.tau));
        }
        if !(self.logit_reg >= 0.0 && self.logit_reg.is_finite()) {
            v.push("logit_reg must be non-negative".into());
        }
        if self.target_hard_period == Some(0) {
            v.push("target_hard_period must be positive".into());
        }
        if self.noise_start < 0.0 || self.noise_end < 0.0 {
            v.push("noise std-devs must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.noise_anneal_fraction) {
            v.push("noise_anneal_fraction outside [0, 1]".into());
        }
        for (name, x) in [
            ("batch_size", self.batch_size),
            ("message_width", self.message_width),
            ("replay_capacity", self.replay_capacity),
            ("train_every", self.train_every),
            ("episode_len", self.episode_len),
        ] {
            if x == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        if self.hidden.iter().any(|&h| h == 0) {
            v.push("hidden widths must be positive".into());
        }
        v
    }

    pub fn noise_at(&self, step: usize) -> f64 {
        let horizon = self.noise_anneal_fraction * self.training_steps as f64;
        if horizon <= 0.0 || step as f64 >= horizon {
            return self.noise_end;
        }
        let frac = step as f64 / horizon;
        self.noise_start + (self.noise_end - self.noise_start) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        assert!(TrainerConfig::default().violations().is_empty());
    }

    #[test]
    fn noise_anneals_linearly_then_holds() {
        let cfg = TrainerConfig {
            training_steps: 1000,
            ..Default::default()
        };
        assert_eq!(cfg.noise_at(0), 0.5);
        assert!((cfg.noise_at(250) - 0.275).abs() < 1e-12);
        assert_eq!(cfg.noise_at(500), 0.05);
        assert_eq!(cfg.noise_at(999), 0.05);
    }

    #[test]
    fn bad_values_are_listed() {
        let cfg = TrainerConfig {
            gamma: 1.5,
            tau: 0.0,
            batch_size: 0,
            ..Default::default()
        };
        assert_eq!(cfg.violations().len(), 3);
    }
}
