use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{ExperimentConfig, Method, ResolvedExperiment};
use super::metrics::{aggregate, csv_writer, write_header, EpisodeMetrics, MetricsRow, OrderedWriter, RunMetrics};
use crate::baselines::wcmp_joint;
use crate::env::RoutingEnv;
use crate::gating::{gacml_act, train_gate, GateOverride, GateStats, GateTrainConfig, GatingNet, ThresholdMode};
use crate::par;
use crate::policy::{acml_act, run_training, MultiAgentModel, Trainer, TrainingCurve};
use crate::rng::{self, RunRng, Stream};
use crate::{Error, Result};

/// Something that picks a joint action each step.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Static(&'a [Vec<f64>]),
    Policy(&'a MultiAgentModel),
    Gated {
        model: &'a MultiAgentModel,
        gates: &'a [GatingNet],
        mode: GateOverride,
    },
}

/// A chosen joint action and the agents whose local message went out.
pub struct Decision {
    pub actions: Vec<Vec<f64>>,
    pub sent: Vec<bool>,
}

impl Controller<'_> {
    pub fn communicates(&self) -> bool {
        match self {
            Controller::Static(_) => false,
            Controller::Policy(m) => m.communicates(),
            Controller::Gated { .. } => true,
        }
    }

    pub fn decide(&self, obs: &[Vec<f64>]) -> Result<Decision> {
        match *self {
            Controller::Static(actions) => Ok(Decision {
                actions: actions.to_vec(),
                sent: vec![false; actions.len()],
            }),
            Controller::Policy(model) => Ok(Decision {
                actions: acml_act::<RunRng>(model, obs, None)?.actions,
                sent: vec![model.communicates(); model.num_agents()],
            }),
            Controller::Gated { model, gates, mode } => {
                let out = gacml_act(model, gates, obs, mode)?;
                Ok(Decision {
                    sent: out.decisions.iter().map(|d| d.g).collect(),
                    actions: out.act.actions,
                })
            }
        }
    }
}

/// Deterministic evaluation episodes. Episode `e` of run `seed` always sees
/// the same demand noise, whatever controller is being evaluated.
pub fn evaluate(
    env: &mut RoutingEnv,
    controller: Controller<'_>,
    seed: u64,
    episodes: usize,
    episode_len: usize,
) -> Result<Vec<EpisodeMetrics>> {
    let n = env.num_agents();
    let mut out = Vec::with_capacity(episodes);
    for e in 0..episodes as u64 {
        env.reset(rng::episode_seed(seed, Stream::Eval, e));
        let mut stats = GateStats::new(n);
        for _ in 0..episode_len {
            let d = controller.decide(&env.features_all())?;
            let r = env.step(&d.actions)?;
            stats.steps += 1;
            for (s, &g) in stats.sent.iter_mut().zip(&d.sent) {
                *s += u64::from(g);
            }
            stats.reward_sum += r.reward;
            stats.mlu_sum += r.mlu;
        }
        let possible = if controller.communicates() { stats.messages_possible() } else { 0 };
        out.push(EpisodeMetrics {
            episode: e,
            mean_mlu: stats.mean_mlu(),
            mean_reward: stats.mean_reward(),
            msgs_sent: stats.messages_sent(),
            msgs_possible: possible,
            open_rates: stats.open_rates(),
        });
    }
    Ok(out)
}

fn mean_reward(episodes: &[EpisodeMetrics]) -> f64 {
    episodes.iter().map(|e| e.mean_reward).sum::<f64>() / episodes.len().max(1) as f64
}

/// Everything one seed produced.
pub struct SeedRun {
    pub metrics: RunMetrics,
    pub checkpoint: Option<Checkpoint>,
    pub curve: Option<TrainingCurve>,
    pub gate_episodes: Vec<GateStats>,
}

fn episode_len(resolved: &ResolvedExperiment) -> usize {
    resolved.config.trainer.episode_len
}

/// WCMP's mean evaluation reward for `seed`.
pub fn wcmp_reference(resolved: &ResolvedExperiment, seed: u64) -> Result<f64> {
    let actions = wcmp_joint(&resolved.topology, resolved.config.wcmp);
    let mut env = resolved.make_env()?;
    let eps = evaluate(
        &mut env,
        Controller::Static(&actions),
        seed,
        resolved.config.eval_episodes,
        episode_len(resolved),
    )?;
    Ok(mean_reward(&eps))
}

/// Phase-1 training for a learned method.
pub fn train_phase1(resolved: &ResolvedExperiment, seed: u64) -> Result<(Trainer, TrainingCurve)> {
    let wiring = resolved
        .config
        .method
        .wiring()
        .ok_or_else(|| Error::Invalid("wcmp has nothing to train".into()))?;
    let mut env = resolved.make_env()?;
    let out = run_training(&mut env, wiring, resolved.config.trainer.clone(), seed)?;
    Ok((out.trainer, out.curve))
}

/// Trains (if needed) and evaluates one seed.
pub fn run_seed(resolved: &ResolvedExperiment, seed: u64) -> Result<SeedRun> {
    let started = Instant::now();
    let cfg = &resolved.config;
    let wcmp_reward = wcmp_reference(resolved, seed)?;
    let mut env = resolved.make_env()?;
    let eval_len = episode_len(resolved);
    let topology = resolved.topology.name.clone();
    if cfg.method == Method::Wcmp {
        let actions = wcmp_joint(&resolved.topology, cfg.wcmp);
        let episodes = evaluate(&mut env, Controller::Static(&actions), seed, cfg.eval_episodes, eval_len)?;
        return Ok(SeedRun {
            metrics: RunMetrics {
                method: cfg.method,
                topology,
                seed,
                episodes,
                final_window_reward: None,
                wcmp_reward,
                converged: false,
                wall_clock_secs: started.elapsed().as_secs_f64(),
            },
            checkpoint: None,
            curve: None,
            gate_episodes: Vec::new(),
        });
    }
    let (trainer, curve) = train_phase1(resolved, seed)?;
    let mut checkpoint = Checkpoint::from_trainer(cfg.method, &topology, seed, &trainer);
    let (episodes, gate_episodes) = if cfg.method == Method::Gacml {
        let gate = train_gate(&trainer, &mut env, &resolved.gating(), seed)?;
        let controller = Controller::Gated {
            model: &gate.model,
            gates: &gate.gates,
            mode: GateOverride::Learned,
        };
        let eps = evaluate(&mut env, controller, seed, cfg.eval_episodes, eval_len)?;
        checkpoint.online = gate.model.clone();
        checkpoint.gates = Some(gate.gates);
        (eps, gate.episodes)
    } else {
        let eps = evaluate(&mut env, Controller::Policy(&trainer.online), seed, cfg.eval_episodes, eval_len)?;
        (eps, Vec::new())
    };
    let final_window = curve.final_window_reward(0.2);
    Ok(SeedRun {
        metrics: RunMetrics {
            method: cfg.method,
            topology,
            seed,
            episodes,
            final_window_reward: Some(final_window),
            wcmp_reward,
            converged: final_window > wcmp_reward,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
        checkpoint: Some(checkpoint),
        curve: Some(curve),
        gate_episodes,
    })
}

/// Result of a multi-seed experiment.
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<RunMetrics>,
    pub failures: Vec<(u64, String)>,
    pub aggregate: Option<MetricsRow>,
}

impl ExperimentResult {
    pub fn seed_rows(&self) -> Vec<MetricsRow> {
        self.runs.iter().map(RunMetrics::summary_row).collect()
    }
}

pub fn checkpoint_path(dir: &Path, method: Method, seed: u64) -> PathBuf {
    dir.join(format!("{}_seed{seed}.json", method.name()))
}

/// Runs every seed (in parallel when enabled). Each seed's summary row is
/// appended to `metrics.csv` as soon as all earlier seeds are written; a
/// failing seed is reported and skipped. Writes `config.json` (the resolved
/// config), `episodes.csv` and per-seed checkpoints when `out_dir` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let resolved = config.resolve()?;
    let cfg = &resolved.config;
    let out_dir = cfg.out_dir.as_ref().map(PathBuf::from);
    let writer = match &out_dir {
        Some(dir) => {
            fs::create_dir_all(dir.join("checkpoints"))?;
            fs::write(dir.join("config.json"), cfg.to_json())?;
            Some(OrderedWriter::new(fs::File::create(dir.join("metrics.csv"))?)?)
        }
        None => None,
    };
    let results = par::map_range(cfg.exec, cfg.seeds.len(), |k| {
        let seed = cfg.seeds[k];
        let run = run_seed(&resolved, seed);
        if let (Some(w), Ok(run)) = (&writer, &run) {
            w.submit(k, vec![run.metrics.summary_row()]);
        } else if let Some(w) = &writer {
            w.submit(k, Vec::new());
        }
        if let (Some(dir), Ok(SeedRun { checkpoint: Some(ck), .. })) = (&out_dir, &run) {
            ck.save(checkpoint_path(&dir.join("checkpoints"), cfg.method, seed))?;
        }
        run
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in cfg.seeds.iter().zip(results) {
        match r {
            Ok(run) => runs.push(run.metrics),
            Err(e) => failures.push((*seed, e.to_string())),
        }
    }
    let rows: Vec<MetricsRow> = runs.iter().map(RunMetrics::summary_row).collect();
    let agg = aggregate(&rows);
    if let (Some(dir), Some(w)) = (&out_dir, writer) {
        w.finish(agg.as_slice())?;
        let mut ep = csv_writer(fs::File::create(dir.join("episodes.csv"))?);
        write_header(&mut ep)?;
        for run in &runs {
            for row in run.episode_rows() {
                ep.serialize(row)?;
            }
        }
        ep.flush()?;
        if !failures.is_empty() {
            let text: String = failures.iter().map(|(s, e)| format!("seed {s}: {e}\n")).collect();
            fs::write(dir.join("failures.txt"), text)?;
        }
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
        failures,
        aggregate: agg,
    })
}

/// Realized pruning and reward of gates trained against one phase-1 model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateEval {
    pub threshold: ThresholdMode,
    pub prune_frac: f64,
    pub mean_reward: f64,
    pub mean_mlu: f64,
    pub open_rates: Vec<f64>,
}

/// Trains one set of gates per threshold mode on the same frozen phase-1
/// model and evaluates each on the seed's evaluation episodes.
pub fn evaluate_thresholds(
    resolved: &ResolvedExperiment,
    phase1: &Trainer,
    seed: u64,
    modes: &[ThresholdMode],
) -> Result<Vec<GateEval>> {
    let base = resolved.gating();
    let eps = resolved.config.eval_episodes;
    let len = episode_len(resolved);
    modes
        .iter()
        .map(|&threshold| {
            let cfg = GateTrainConfig { threshold, ..base.clone() };
            let mut env = resolved.make_env()?;
            let gate = train_gate(phase1, &mut env, &cfg, seed)?;
            let controller = Controller::Gated {
                model: &gate.model,
                gates: &gate.gates,
                mode: GateOverride::Learned,
            };
            let m = evaluate(&mut env, controller, seed, eps, len)?;
            let sent: u64 = m.iter().map(|e| e.msgs_sent).sum();
            let possible: u64 = m.iter().map(|e| e.msgs_possible).sum();
            let agents = phase1.online.num_agents();
            Ok(GateEval {
                threshold,
                prune_frac: super::metrics::prune_frac(sent, possible),
                mean_reward: mean_reward(&m),
                mean_mlu: m.iter().map(|e| e.mean_mlu).sum::<f64>() / m.len() as f64,
                open_rates: (0..agents)
                    .map(|i| m.iter().map(|e| e.open_rates[i]).sum::<f64>() / m.len() as f64)
                    .collect(),
            })
        })
        .collect()
}

/// Ungated phase-1 evaluation reward for `seed`.
pub fn reference_reward(resolved: &ResolvedExperiment, phase1: &Trainer, seed: u64) -> Result<f64> {
    let mut env = resolved.make_env()?;
    let m = evaluate(
        &mut env,
        Controller::Policy(&phase1.online),
        seed,
        resolved.config.eval_episodes,
        episode_len(resolved),
    )?;
    Ok(mean_reward(&m))
}

/// Loads the phase-1 ACML checkpoint for `seed` from `dir`, or trains one
/// (and saves it there) when it is missing.
pub fn phase1_checkpoint(resolved: &ResolvedExperiment, seed: u64, dir: Option<&Path>) -> Result<Trainer> {
    if let Some(dir) = dir {
        let path = checkpoint_path(dir, Method::Acml, seed);
        if path.exists() {
            return Ok(Checkpoint::load(&path)?.to_trainer());
        }
    }
    let mut acml = resolved.clone();
    acml.config.method = Method::Acml;
    let (trainer, _) = train_phase1(&acml, seed)?;
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        Checkpoint::from_trainer(Method::Acml, &resolved.topology.name, seed, &trainer)
            .save(checkpoint_path(dir, Method::Acml, seed))?;
    }
    Ok(trainer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub target_percent: f64,
    /// Seed-averaged realized prune fraction, in percent.
    pub realized_percent: f64,
    pub mean_reward: f64,
    /// `(R_ACML - R_GACML) / |R_ACML|`, in percent.
    pub reward_decrease_percent: f64,
    pub per_seed_prune: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub acml_reward: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["target_percent", "realized_percent", "mean_reward", "reward_decrease_percent"])?;
        for r in &self.rows {
            w.write_record([
                r.target_percent.to_string(),
                r.realized_percent.to_string(),
                r.mean_reward.to_string(),
                r.reward_decrease_percent.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fixed-threshold sweep: one phase-1 ACML model per seed (loaded from
/// `checkpoints` or trained), gates trained for every target percentage.
pub fn prune_sweep(config: &ExperimentConfig, percents: &[f64], checkpoints: Option<&Path>) -> Result<SweepResult> {
    let mut base = config.clone();
    if base.gating.is_none() {
        base.gating = Some(GateTrainConfig::default());
    }
    let resolved = base.resolve()?;
    let window = match resolved.gating().threshold {
        ThresholdMode::Fixed { window, .. } => window,
        _ => crate::gating::DEFAULT_WINDOW,
    };
    let modes: Vec<ThresholdMode> = percents
        .iter()
        .map(|&percent| ThresholdMode::Fixed { percent, window })
        .collect();
    for m in &modes {
        let v = m.violations();
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
    }
    let per_seed = par::map(resolved.config.exec, &resolved.config.seeds, |&seed| {
        let phase1 = phase1_checkpoint(&resolved, seed, checkpoints)?;
        let reference = reference_reward(&resolved, &phase1, seed)?;
        let evals = evaluate_thresholds(&resolved, &phase1, seed, &modes)?;
        Ok::<_, Error>((reference, evals))
    });
    let per_seed: Vec<(f64, Vec<GateEval>)> = per_seed.into_iter().collect::<Result<_>>()?;
    Ok(summarize_sweep(percents, &per_seed))
}

/// Seed-averages sweep results; reward decrease uses seed-averaged rewards.
pub fn summarize_sweep(percents: &[f64], per_seed: &[(f64, Vec<GateEval>)]) -> SweepResult {
    let n = per_seed.len() as f64;
    let acml_reward = per_seed.iter().map(|(r, _)| r).sum::<f64>() / n;
    let rows = percents
        .iter()
        .enumerate()
        .map(|(k, &target)| {
            let prunes: Vec<f64> = per_seed.iter().map(|(_, e)| e[k].prune_frac).collect();
            let reward = per_seed.iter().map(|(_, e)| e[k].mean_reward).sum::<f64>() / n;
            SweepRow {
                target_percent: target,
                realized_percent: 100.0 * prunes.iter().sum::<f64>() / n,
                mean_reward: reward,
                reward_decrease_percent: 100.0 * reward_decrease(acml_reward, reward),
                per_seed_prune: prunes,
            }
        })
        .collect();
    SweepResult { acml_reward, rows }
}

/// `(reference - gated) / |reference|`.
pub fn reward_decrease(reference: f64, gated: f64) -> f64 {
    (reference - gated) / reference.abs()
}
