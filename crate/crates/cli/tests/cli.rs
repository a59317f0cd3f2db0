use std::path::Path;
use std::process::{Command, Output};

fn gacml(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gacml"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const QUICK: &str = r#"{
  "topology": "small",
  "eval_episodes": 1,
  "trainer": { "training_steps": 600, "warmup_steps": 100, "episode_len": 100, "train_every": 4 },
  "gating": { "steps": 200, "episode_len": 100 }
}"#;

fn quick_config(dir: &Path) -> String {
    let path = dir.join("quick.json");
    std::fs::write(&path, QUICK).unwrap();
    path.display().to_string()
}

#[test]
fn train_writes_metrics_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let o = gacml(dir.path(), &["train", "--config", &cfg, "--seed", "3", "--method", "maddpg", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,topology,seed,episode,mean_mlu,mean_reward,msgs_sent,msgs_possible,prune_frac,converged"
    );
    assert!(lines.next().unwrap().starts_with("maddpg,small,3,all,"));
    assert!(lines.next().unwrap().starts_with("maddpg,small,all,all,"));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/config.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seeds"], serde_json::json!([3]));
    assert_eq!(sidecar["method"], "maddpg");
}

#[test]
fn eval_reads_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let o = gacml(dir.path(), &["train", "--config", &cfg, "--method", "gacml", "--out", "a"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for gates in ["learned", "open", "closed"] {
        let o = gacml(
            dir.path(),
            &["eval", "--checkpoint", "a/checkpoints/gacml_seed1.json", "--gates", gates, "--out", gates],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let csv = std::fs::read_to_string(dir.path().join(gates).join("metrics.csv")).unwrap();
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        let prune: f64 = row[8].parse().unwrap();
        match gates {
            "open" => assert_eq!(prune, 0.0),
            "closed" => assert_eq!(prune, 1.0),
            _ => assert!((0.0..=1.0).contains(&prune)),
        }
    }
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--method", "nonsense"],
        vec!["train", "--topology", "no-such-topology"],
        vec!["train", "--config", "missing.json"],
        vec!["eval", "--checkpoint", "missing.json"],
        vec!["frobnicate"],
        vec!["gen-flow", "--wave", "1,2,3"],
    ];
    for args in cases {
        let o = gacml(dir.path(), &args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
    }
    std::fs::write(dir.path().join("bad.json"), r#"{"seeds": [], "eval_episodes": 0}"#).unwrap();
    let o = gacml(dir.path(), &["train", "--config", "bad.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("seeds") || stderr(&o).contains("eval"), "{}", stderr(&o));
}

#[test]
fn trace_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.csv"), "t,commodity,demand\n0,0,1\n0,1,x\n").unwrap();
    let o = gacml(dir.path(), &["gen-flow", "--validate", "t.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn gen_flow_round_trips_through_validate() {
    let dir = tempfile::tempdir().unwrap();
    let o = gacml(dir.path(), &["gen-flow", "--steps", "50", "--seed", "4", "--output", "f.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,commodity,demand");
    assert_eq!(text.lines().count(), 1 + 50 * 2);
    let o = gacml(dir.path(), &["gen-flow", "--validate", "f.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let again = gacml(dir.path(), &["gen-flow", "--steps", "50", "--seed", "4", "--output", "g.csv"]);
    assert_eq!(code(&again), 0);
    assert_eq!(text, std::fs::read_to_string(dir.path().join("g.csv")).unwrap());
}

#[test]
fn topology_export_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let o = gacml(dir.path(), &["topology", "--topology", "moderate", "--export", "m.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = gacml(dir.path(), &["topology", "--topology", "m.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut broken: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    broken["links"][0]["capacity"] = serde_json::json!(-1.0);
    std::fs::write(dir.path().join("bad.json"), broken.to_string()).unwrap();
    let o = gacml(dir.path(), &["topology", "--topology", "bad.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("capacity"), "{}", stderr(&o));
}

#[test]
fn compare_tabulates_methods() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let o = gacml(dir.path(), &["compare", "--config", &cfg, "--methods", "wcmp,ind_ac", "--out", "c"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("c/compare.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("wcmp,small,1,all")));
    assert!(csv.lines().any(|l| l.starts_with("ind_ac,small,1,all")));
}

#[test]
fn sweep_prune_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let o = gacml(
        dir.path(),
        &["sweep-prune", "--config", &cfg, "--percents", "50,100", "--checkpoints", "ck", "--out", "s"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("ck/acml_seed1.json").exists());
    let csv = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
