use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::WcmpWeighting;
use crate::env::{FlowSpec, Sinusoid, Topology};
use crate::gating::GateTrainConfig;
use crate::par::ExecMode;
use crate::policy::{TrainerConfig, Wiring};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Acml,
    Gacml,
    IndAc,
    Maddpg,
    Amp,
    Wcmp,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Acml,
        Method::Gacml,
        Method::IndAc,
        Method::Maddpg,
        Method::Amp,
        Method::Wcmp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Acml => "acml",
            Method::Gacml => "gacml",
            Method::IndAc => "ind_ac",
            Method::Maddpg => "maddpg",
            Method::Amp => "amp",
            Method::Wcmp => "wcmp",
        }
    }

    /// Network wiring of the (phase-1) learner; `None` for WCMP.
    pub fn wiring(self) -> Option<Wiring> {
        match self {
            Method::Acml | Method::Gacml => Some(Wiring::ACML),
            Method::IndAc => Some(Wiring::IND_AC),
            Method::Maddpg => Some(Wiring::MADDPG),
            Method::Amp => Some(Wiring::AMP),
            Method::Wcmp => None,
        }
    }

    pub fn is_learned(self) -> bool {
        self.wiring().is_some()
    }

    pub fn communicates(self) -> bool {
        self.wiring().is_some_and(|w| w.messages)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| {
                Error::Config(vec![format!(
                    "unknown method {s:?} (expected acml, gacml, ind_ac, maddpg, amp or wcmp)"
                )])
            })
    }
}

/// One experiment: a method on a topology and flow, over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in name (`small`, `moderate`, `large`) or a topology JSON path.
    pub topology: String,
    pub method: Method,
    /// Demand process; defaults to [`default_flow`] for the topology.
    pub flow: Option<FlowSpec>,
    pub trainer: TrainerConfig,
    /// Phase-2 settings, required for `gacml`.
    pub gating: Option<GateTrainConfig>,
    pub wcmp: WcmpWeighting,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub out_dir: Option<String>,
    pub exec: ExecMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            topology: "small".into(),
            method: Method::Acml,
            flow: None,
            trainer: TrainerConfig::default(),
            gating: None,
            wcmp: WcmpWeighting::default(),
            seeds: vec![1],
            eval_episodes: 5,
            out_dir: None,
            exec: ExecMode::default(),
        }
    }
}

/// Sinusoidal demands around 70% of the mean link capacity, one wave per
/// commodity with staggered periods and phases, plus uniform noise.
pub fn default_flow(topology: &Topology) -> FlowSpec {
    let scale = topology.mean_capacity() / 10.0;
    let waves = (0..topology.num_agents())
        .map(|i| Sinusoid {
            amplitude: 3.0 * scale,
            angular_freq: std::f64::consts::TAU / (100.0 + 57.0 * i as f64),
            phase: i as f64,
            offset: 7.0 * scale,
        })
        .collect();
    FlowSpec::Synthetic {
        waves,
        noise: 0.5 * scale,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Every problem with the config, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let topology = match Topology::resolve(&self.topology) {
            Ok(t) => Some(t),
            Err(e) => {
                v.push(format!("topology: {e}"));
                None
            }
        };
        if let (Some(t), Some(flow)) = (&topology, &self.flow) {
            if let Err(e) = flow.build(t.num_agents()) {
                v.push(format!("flow: {e}"));
            }
        }
        if self.method.is_learned() {
            v.extend(self.trainer.violations().into_iter().map(|s| format!("trainer: {s}")));
        }
        match (&self.gating, self.method) {
            (None, Method::Gacml) => v.push("method gacml requires a gating section".into()),
            (Some(g), _) => v.extend(g.violations().into_iter().map(|s| format!("gating: {s}"))),
            _ => {}
        }
        if self.seeds.is_empty() {
            v.push("seeds must not be empty".into());
        }
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            v.push("seeds must be distinct".into());
        }
        if self.eval_episodes == 0 {
            v.push("eval_episodes must be positive".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Validates and fills defaults, yielding the config actually run.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        self.validate()?;
        let topology = Arc::new(Topology::resolve(&self.topology)?);
        let mut config = self.clone();
        if config.flow.is_none() {
            config.flow = Some(default_flow(&topology));
        }
        Ok(ResolvedExperiment { config, topology })
    }
}

/// A validated config with its topology loaded and every default filled in.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    pub topology: Arc<Topology>,
}

impl ResolvedExperiment {
    pub fn flow(&self) -> &FlowSpec {
        self.config.flow.as_ref().expect("resolved flow")
    }

    pub fn make_env(&self) -> Result<crate::env::RoutingEnv> {
        let flow = self.flow().build(self.topology.num_agents())?;
        Ok(crate::env::RoutingEnv::new(self.topology.clone(), flow)?)
    }

    pub fn gating(&self) -> GateTrainConfig {
        self.config.gating.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_violation_is_listed() {
        let cfg = ExperimentConfig {
            topology: "nowhere".into(),
            method: Method::Gacml,
            seeds: vec![3, 3],
            eval_episodes: 0,
            ..Default::default()
        };
        let v = cfg.violations();
        assert_eq!(v.len(), 4, "{v:?}");
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let err = ExperimentConfig::from_json(r#"{"sedes": [1]}"#).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("IND-AC".parse::<Method>().unwrap(), Method::IndAc);
    }

    #[test]
    fn resolve_fills_the_flow() {
        let r = ExperimentConfig::default().resolve().unwrap();
        assert!(r.config.flow.is_some());
        let back = ExperimentConfig::from_json(&r.config.to_json()).unwrap();
        assert_eq!(back, r.config);
    }
}
