use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gacml_core::env::{FlowProcess, FlowSpec, Sinusoid, Topology};
use gacml_core::gating::{GateOverride, GateTrainConfig};
use gacml_core::harness::{
    self, Checkpoint, Controller, ExperimentConfig, Method, MetricsRow, RunMetrics,
};
use gacml_core::Error;

#[derive(Parser)]
#[command(name = "gacml", version, about = "Train, evaluate and compare multi-agent routing controllers")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON). Flags below override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// acml, gacml, ind_ac, maddpg, amp or wcmp.
    #[arg(long, global = true, value_name = "NAME")]
    method: Option<String>,
    /// small, moderate, large or a topology JSON file.
    #[arg(long, global = true, value_name = "NAME|PATH")]
    topology: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every seed; writes metrics.csv, episodes.csv,
    /// config.json and checkpoints.
    Train {
        /// Override the number of training steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a saved checkpoint.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Force every gate open or shut instead of using the learned gates.
        #[arg(long, value_parser = ["learned", "open", "closed"], default_value = "learned")]
        gates: String,
    },
    /// Fixed-threshold pruning sweep over target prune percentages.
    SweepPrune {
        #[arg(long, value_delimiter = ',', default_value = "50,80,95,100")]
        percents: Vec<f64>,
        /// Directory of phase-1 ACML checkpoints; missing ones are trained
        /// and saved there.
        #[arg(long, value_name = "DIR")]
        checkpoints: Option<PathBuf>,
    },
    /// Write a demand trace, or validate an existing one.
    GenFlow {
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// One sinusoid per commodity: amplitude,angular_freq,phase,offset.
        #[arg(long = "wave", value_name = "A,W,PHI,B")]
        waves: Vec<String>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
        /// Check a trace file instead of generating one.
        #[arg(long, value_name = "PATH")]
        validate: Option<PathBuf>,
    },
    /// Print (and validate) a topology, optionally exporting it as JSON.
    Topology {
        #[arg(long, value_name = "PATH")]
        export: Option<PathBuf>,
    },
    /// Run several methods on the same seeds and tabulate them.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "wcmp,ind_ac,maddpg,amp,acml")]
        methods: Vec<String>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut config = base_config(&cli.global)?;
    match cli.command {
        Command::Train { steps } => {
            if let Some(steps) = steps {
                config.trainer.training_steps = steps;
            }
            train(&config)
        }
        Command::Eval { checkpoint, gates } => eval(config, &cli.global, &checkpoint, &gates),
        Command::SweepPrune { percents, checkpoints } => sweep(&config, &percents, checkpoints.as_deref()),
        Command::GenFlow {
            steps,
            waves,
            noise,
            output,
            validate,
        } => gen_flow(&config, steps, &waves, noise, output, validate),
        Command::Topology { export } => topology(&config, export),
        Command::Compare { methods } => compare(&config, &methods),
    }
}

fn base_config(g: &Global) -> Result<ExperimentConfig, Failure> {
    let mut config = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &g.out {
        config.out_dir = Some(out.display().to_string());
    }
    if let Some(method) = &g.method {
        config.method = method.parse()?;
    }
    if let Some(topology) = &g.topology {
        config.topology = topology.clone();
    }
    if config.method == Method::Gacml && config.gating.is_none() {
        config.gating = Some(GateTrainConfig::default());
    }
    if config.out_dir.is_none() {
        config.out_dir = Some("out".into());
    }
    Ok(config)
}

fn out_dir(config: &ExperimentConfig) -> PathBuf {
    PathBuf::from(config.out_dir.as_deref().unwrap_or("out"))
}

fn print_row(row: &MetricsRow) {
    println!(
        "{:<7} {:<9} seed={:<4} mlu={:.4} reward={:.4} prune={:.3} converged={}",
        row.method, row.topology, row.seed, row.mean_mlu, row.mean_reward, row.prune_frac, row.converged
    );
}

fn train(config: &ExperimentConfig) -> Outcome {
    let result = harness::run_experiment(config)?;
    for row in result.seed_rows() {
        print_row(&row);
    }
    if let Some(agg) = &result.aggregate {
        print_row(agg);
    }
    for (seed, e) in &result.failures {
        eprintln!("seed {seed} failed: {e}");
    }
    println!("metrics written to {}", out_dir(config).join("metrics.csv").display());
    match (result.runs.is_empty(), result.failures.first()) {
        (true, Some((_, e))) => Err(Failure::Runtime(e.clone())),
        _ => Ok(()),
    }
}

fn eval(mut config: ExperimentConfig, g: &Global, path: &Path, gates: &str) -> Outcome {
    let ck = Checkpoint::load(path).map_err(|e| Failure::Config(e.to_string()))?;
    if g.topology.is_none() {
        config.topology = ck.topology.clone();
    }
    if g.method.is_none() {
        config.method = ck.method;
    }
    config.trainer = ck.config.clone();
    if config.method == Method::Gacml && config.gating.is_none() {
        config.gating = Some(GateTrainConfig::default());
    }
    let resolved = config.resolve()?;
    let mut env = resolved.make_env()?;
    let mode = match gates {
        "open" => GateOverride::AllOpen,
        "closed" => GateOverride::AllClosed,
        _ => GateOverride::Learned,
    };
    let controller = match (&ck.gates, mode) {
        (Some(gates), _) => Controller::Gated {
            model: &ck.online,
            gates,
            mode,
        },
        (None, GateOverride::Learned) => Controller::Policy(&ck.online),
        (None, _) => Controller::Gated {
            model: &ck.online,
            gates: &[],
            mode,
        },
    };
    let dir = out_dir(&config);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), resolved.config.to_json())?;
    let mut w = csv_file(&dir.join("metrics.csv"))?;
    let mut rows = Vec::new();
    for &seed in &resolved.config.seeds {
        let episodes = harness::evaluate(
            &mut env,
            controller,
            seed,
            resolved.config.eval_episodes,
            resolved.config.trainer.episode_len,
        )?;
        let metrics = RunMetrics {
            method: config.method,
            topology: resolved.topology.name.clone(),
            seed,
            episodes,
            final_window_reward: None,
            wcmp_reward: harness::wcmp_reference(&resolved, seed)?,
            converged: false,
            wall_clock_secs: 0.0,
        };
        let row = metrics.summary_row();
        print_row(&row);
        w.serialize(&row).map_err(Error::from)?;
        rows.push(row);
    }
    if let Some(agg) = harness::aggregate(&rows) {
        w.serialize(&agg).map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_file(path: &Path) -> Result<harness::MetricsCsv, Failure> {
    Ok(harness::create_metrics_csv(path)?)
}

fn sweep(config: &ExperimentConfig, percents: &[f64], checkpoints: Option<&Path>) -> Outcome {
    let result = harness::prune_sweep(config, percents, checkpoints)?;
    println!("acml reference reward {:.4}", result.acml_reward);
    println!("{:>8} {:>10} {:>10} {:>14}", "target%", "pruned%", "reward", "decrease%");
    for r in &result.rows {
        println!(
            "{:>8} {:>10.2} {:>10.4} {:>14.2}",
            r.target_percent, r.realized_percent, r.mean_reward, r.reward_decrease_percent
        );
    }
    let dir = out_dir(config);
    fs::create_dir_all(&dir)?;
    result.write_csv(dir.join("sweep.csv"))?;
    fs::write(dir.join("config.json"), config.to_json())?;
    Ok(())
}

fn parse_wave(text: &str) -> Result<Sinusoid, Failure> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Config(format!("wave {text:?}: {e}")))?;
    match parts[..] {
        [amplitude, angular_freq, phase, offset] => Ok(Sinusoid {
            amplitude,
            angular_freq,
            phase,
            offset,
        }),
        _ => Err(Failure::Config(format!(
            "wave {text:?}: expected amplitude,angular_freq,phase,offset"
        ))),
    }
}

fn gen_flow(
    config: &ExperimentConfig,
    steps: usize,
    waves: &[String],
    noise: Option<f64>,
    output: Option<PathBuf>,
    validate: Option<PathBuf>,
) -> Outcome {
    if let Some(path) = validate {
        let summary = harness::validate_flow(&path).map_err(|e| Failure::Config(e.to_string()))?;
        println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        return Ok(());
    }
    let topology = Topology::resolve(&config.topology).map_err(|e| Failure::Config(e.to_string()))?;
    let n = topology.num_agents();
    let process = if waves.is_empty() {
        let spec = config.flow.clone().unwrap_or_else(|| harness::default_flow(&topology));
        let mut process = spec.build(n).map_err(|e| Failure::Config(e.to_string()))?;
        if let (Some(x), FlowProcess::Synthetic { noise, .. }) = (noise, &mut process) {
            *noise = x;
        }
        process
    } else {
        let waves = waves.iter().map(|w| parse_wave(w)).collect::<Result<Vec<_>, _>>()?;
        FlowSpec::Synthetic {
            waves,
            noise: noise.unwrap_or(0.0),
        }
        .build(n)
        .map_err(|e| Failure::Config(e.to_string()))?
    };
    let seed = config.seeds.first().copied().unwrap_or(1);
    let trace = harness::gen_flow(&process, n, steps, seed)?;
    let path = output.unwrap_or_else(|| out_dir(config).join("flow.csv"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let summary = harness::write_flow(&trace, &path)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    println!("trace written to {}", path.display());
    Ok(())
}

fn topology(config: &ExperimentConfig, export: Option<PathBuf>) -> Outcome {
    let t = Topology::resolve(&config.topology).map_err(|e| Failure::Config(e.to_string()))?;
    println!("topology {} : {} nodes, {} links, {} agents", t.name, t.nodes.len(), t.links.len(), t.num_agents());
    for (k, l) in t.links.iter().enumerate() {
        println!("  link {k:>2} {}-{} capacity {}", l.from, l.to, l.capacity);
    }
    for (i, c) in t.commodities.iter().enumerate() {
        println!("  agent {i} {} -> {}", c.source, c.destination);
        for (k, p) in c.paths.iter().enumerate() {
            println!("    path {k}: {} (bottleneck {})", p.nodes.join("-"), t.bottleneck(i, k));
        }
    }
    if let Some(path) = export {
        fs::write(&path, t.to_json())?;
        println!("written to {}", path.display());
    }
    Ok(())
}

fn compare(config: &ExperimentConfig, methods: &[String]) -> Outcome {
    let methods: Vec<Method> = methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<_, _>>()?;
    let root = out_dir(config);
    fs::create_dir_all(&root)?;
    let mut w = csv_file(&root.join("compare.csv"))?;
    println!("{:<7} {:>10} {:>10} {:>12} {:>8}", "method", "mean_mlu", "reward", "convergence", "prune");
    for method in methods {
        let mut c = config.clone();
        c.method = method;
        if method == Method::Gacml && c.gating.is_none() {
            c.gating = Some(GateTrainConfig::default());
        }
        c.out_dir = Some(root.join(method.name()).display().to_string());
        let result = harness::run_experiment(&c)?;
        for row in result.seed_rows() {
            w.serialize(&row).map_err(Error::from)?;
        }
        if let Some(agg) = &result.aggregate {
            w.serialize(agg).map_err(Error::from)?;
            let conv = if method.is_learned() {
                format!("{:.2}", agg.converged)
            } else {
                "-".into()
            };
            println!(
                "{:<7} {:>10.4} {:>10.4} {:>12} {:>8.3}",
                method, agg.mean_mlu, agg.mean_reward, conv, agg.prune_frac
            );
        }
        for (seed, e) in &result.failures {
            eprintln!("{method} seed {seed} failed: {e}");
        }
    }
    w.flush()?;
    println!("table written to {}", root.join("compare.csv").display());
    Ok(())
}
