//! Experiment orchestration: configs, seeded multi-run execution, metrics,
//! pruning sweeps, demand-trace generation and checkpoints.

mod checkpoint;
mod config;
mod flowgen;
mod metrics;
mod run;

pub use checkpoint::Checkpoint;
pub use config::{default_flow, ExperimentConfig, Method, ResolvedExperiment};
pub use flowgen::{gen_flow, validate_flow, write_flow, FlowSummary};
pub use metrics::{
    aggregate, convergence_ratio, convergence_ratio_of, create_metrics_csv, MetricsCsv, prune_frac, EpisodeMetrics, MetricsRow,
    OrderedWriter, RunMetrics, METRICS_HEADER,
};
pub use run::{
    checkpoint_path, evaluate, evaluate_thresholds, phase1_checkpoint, prune_sweep, reference_reward,
    reward_decrease, run_experiment, run_seed, summarize_sweep, train_phase1, wcmp_reference, Controller,
    Decision, ExperimentResult, GateEval, SeedRun, SweepResult, SweepRow,
};
