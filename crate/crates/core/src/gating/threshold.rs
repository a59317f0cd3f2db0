use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_WINDOW: usize = 1000;

/// Order statistic of `window` at index `floor(len * percent / 100)`,
/// clamped to the last element. `percent = 100` yields the maximum.
pub fn fixed_threshold(window: &[f64], percent: f64) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::Invalid("threshold window is empty".into()));
    }
    if !(0.0..=100.0).contains(&percent) {
        return Err(Error::Invalid(format!("prune percent {percent} outside [0, 100]")));
    }
    let mut sorted = window.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() as f64 * percent / 100.0).floor() as usize).min(sorted.len() - 1);
    Ok(sorted[idx])
}

/// Exponential moving average step `(1 - beta) * prev + beta * delta_q`.
pub fn dynamic_threshold(prev: f64, delta_q: f64, beta: f64) -> f64 {
    (1.0 - beta) * prev + beta * delta_q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Prune roughly `percent`% of messages using the latest `window` values.
    Fixed {
        percent: f64,
        #[serde(default = "default_window")]
        window: usize,
    },
    Dynamic { beta: f64 },
    /// `T = -inf`: every label is 1 and gating reduces to ACML.
    Off,
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

impl ThresholdMode {
    pub fn violations(&self) -> Vec<String> {
        match *self {
            Self::Fixed { percent, window } => {
                let mut v = Vec::new();
                if !(0.0..=100.0).contains(&percent) {
                    v.push(format!("prune percent {percent} outside [0, 100]"));
                }
                if window == 0 {
                    v.push("threshold window must be positive".into());
                }
                v
            }
            Self::Dynamic { beta } if !(beta > 0.0 && beta <= 1.0) => {
                vec![format!("beta {beta} outside (0, 1]")]
            }
            _ => Vec::new(),
        }
    }
}

/// Running threshold for one agent. Each observed ΔQ first updates the state,
/// then the resulting threshold labels that same ΔQ.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    pub mode: ThresholdMode,
    window: VecDeque<f64>,
    current: Option<f64>,
}

impl ThresholdState {
    pub fn new(mode: ThresholdMode) -> Self {
        let cap = match mode {
            ThresholdMode::Fixed { window, .. } => window,
            _ => 0,
        };
        Self {
            mode,
            window: VecDeque::with_capacity(cap),
            current: None,
        }
    }

    /// The latest threshold, if any value has been observed.
    pub fn current(&self) -> Option<f64> {
        match self.mode {
            ThresholdMode::Off => Some(f64::NEG_INFINITY),
            _ => self.current,
        }
    }

    pub fn window(&self) -> impl Iterator<Item = &f64> {
        self.window.iter()
    }

    /// Folds in `delta_q` and returns the threshold it should be labeled
    /// against. The dynamic average starts at the first observed value.
    pub fn observe(&mut self, delta_q: f64) -> Result<f64> {
        let t = match self.mode {
            ThresholdMode::Off => f64::NEG_INFINITY,
            ThresholdMode::Fixed { percent, window } => {
                if self.window.len() == window {
                    self.window.pop_front();
                }
                self.window.push_back(delta_q);
                fixed_threshold(self.window.make_contiguous(), percent)?
            }
            ThresholdMode::Dynamic { beta } => match self.current {
                None => delta_q,
                Some(prev) => dynamic_threshold(prev, delta_q, beta),
            },
        };
        self.current = Some(t);
        Ok(t)
    }
}
