use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Method;
use crate::gating::GatingNet;
use crate::policy::{MultiAgentModel, Optimizers, Trainer, TrainerConfig};
use crate::{Error, Result};

const FORMAT: u32 = 1;

/// Everything needed to resume or evaluate a learner, except the replay
/// buffer. Floats are written in shortest round-trip form, so
/// save -> load -> save reproduces the file byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: u32,
    pub method: Method,
    pub topology: String,
    pub seed: u64,
    pub config: TrainerConfig,
    pub updates: u64,
    pub online: MultiAgentModel,
    pub target: MultiAgentModel,
    pub optimizers: Optimizers,
    #[serde(default)]
    pub gates: Option<Vec<GatingNet>>,
}

impl Checkpoint {
    pub fn from_trainer(method: Method, topology: &str, seed: u64, trainer: &Trainer) -> Self {
        Self {
            format: FORMAT,
            method,
            topology: topology.to_string(),
            seed,
            config: trainer.config.clone(),
            updates: trainer.updates,
            online: trainer.online.clone(),
            target: trainer.target.clone(),
            optimizers: trainer.optimizers.clone(),
            gates: None,
        }
    }

    /// Rebuilds a trainer with an empty replay buffer.
    pub fn to_trainer(&self) -> Trainer {
        let mut t = Trainer::from_parts(
            self.config.clone(),
            self.online.clone(),
            Some(self.target.clone()),
            Some(self.optimizers.clone()),
            self.seed,
        );
        t.updates = self.updates;
        t
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(Error::Invalid(format!(
                "checkpoint format {} is not supported (expected {FORMAT})",
                ck.format
            )));
        }
        ck.online.validate()?;
        ck.target.validate()?;
        if let Some(gates) = &ck.gates {
            for g in gates {
                g.net.validate()?;
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Invalid(format!("checkpoint {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
