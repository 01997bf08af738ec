use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn skillmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skillmix")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn a_true() -> Value {
    json!([[0.5, 0.2, 0.0], [0.0, 0.4, 0.3], [0.1, 0.0, 0.5]])
}

fn selectors() -> Value {
    json!([
        {"eta": 0.5, "rounds": 6, "samples": 600, "window": 3, "seed": 1, "selector": {"kind": "random"}},
        {"eta": 0.5, "rounds": 6, "samples": 600, "window": 3, "seed": 1, "selector": {"kind": "stratified"}},
        {"eta": 0.5, "rounds": 6, "samples": 600, "window": 3, "seed": 1, "selector": {"kind": "skill_it"}}
    ])
}

fn sim_spec(dir: &Path) -> Value {
    json!({
        "seed": 5,
        "dataset": {"kind": "skills", "train": ["a", "b", "c"], "pool_sizes": [300, 300, 300]},
        "graph": {"kind": "learn_bruteforce", "config": {
            "steps": 80, "approx_steps": 10, "weight_scheme": "binary_half", "compare_mode": "steps_to_threshold"
        }},
        "trainer": {"kind": "sim", "a_true": a_true(), "l0": 1.0, "noise_sigma": 0.01,
                    "step_scale": 0.05, "use_realized_counts": true},
        "selectors": selectors(),
        "output_dir": dir.join("out")
    })
}

fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
}

#[test]
fn run_then_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    write_json(&cfg, &sim_spec(dir.path()));
    let summary = ok(&skillmix(&["run", "--config", cfg.to_str().unwrap()]));
    assert_eq!(summary.lines().count(), 4);
    let runs = dir.path().join("out/runs");
    for label in ["random", "stratified", "skillit"] {
        let spec = runs.join(format!("{label}.spec.json"));
        let again = dir.path().join(format!("{label}.again.jsonl"));
        let msg = ok(&skillmix(&[
            "replay",
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            again.to_str().unwrap(),
        ]));
        assert!(msg.starts_with("identical"), "{msg}");
        assert_eq!(fs::read(&again).unwrap(), fs::read(runs.join(format!("{label}.jsonl"))).unwrap());
    }
    let plotted = ok(&skillmix(&["plot", "--run-dir", dir.path().join("out").to_str().unwrap()]));
    assert_eq!(plotted.lines().count(), 3 * 3 + 3 + 3);
}

#[test]
fn tampered_log_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    write_json(&cfg, &sim_spec(dir.path()));
    ok(&skillmix(&["run", "--config", cfg.to_str().unwrap()]));
    let log = dir.path().join("out/runs/skillit.jsonl");
    let text = fs::read_to_string(&log).unwrap().replacen("\"round\":6", "\"round\":6 ", 1);
    fs::write(&log, text).unwrap();
    let spec = dir.path().join("out/runs/skillit.spec.json");
    let out = skillmix(&["replay", "--spec", spec.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("line 6"));
}

#[test]
fn run_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = sim_spec(dir.path());
    spec.as_object_mut().unwrap().remove("seed");
    let cfg = dir.path().join("exp.json");
    write_json(&cfg, &spec);
    let out = skillmix(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn external_adapter_matches_the_in_process_trainer() {
    let dir = tempfile::tempdir().unwrap();
    let adapter = dir.path().join("adapter.json");
    write_json(
        &adapter,
        &json!({
            "dynamics": {"a_true": a_true(), "l0": [1.0, 1.0, 1.0], "step_scale": 0.05, "use_realized_counts": true},
            "train": ["a", "b", "c"],
            "eval": ["a", "b", "c"]
        }),
    );
    let mut base = sim_spec(dir.path());
    base["trainer"]["noise_sigma"] = json!(0.0);
    base["graph"] = json!({"kind": "inline", "weights": [[1.0, 0.5, 0.0], [0.0, 1.0, 0.5], [0.5, 0.0, 1.0]]});
    base["output_dir"] = json!(dir.path().join("sim"));
    let mut ext = base.clone();
    ext["trainer"] = json!({
        "kind": "external",
        "command": [env!("CARGO_BIN_EXE_skillmix"), "sim-adapter", adapter],
        "timeout_secs": 30.0
    });
    ext["output_dir"] = json!(dir.path().join("ext"));
    write_json(&dir.path().join("sim.json"), &base);
    write_json(&dir.path().join("ext.json"), &ext);
    let a = ok(&skillmix(&["run", "--config", dir.path().join("sim.json").to_str().unwrap()]));
    let b = ok(&skillmix(&["run", "--config", dir.path().join("ext.json").to_str().unwrap()]));
    assert_eq!(a, b);
    for label in ["random", "stratified", "skillit"] {
        let f = format!("runs/{label}.jsonl");
        assert_eq!(
            fs::read(dir.path().join("sim").join(&f)).unwrap(),
            fs::read(dir.path().join("ext").join(&f)).unwrap()
        );
    }
}

#[test]
fn flags_override_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    write_json(&cfg, &json!({"seed": 3, "per_skill": 50, "k": 4, "rendered": true}));
    let text = ok(&skillmix(&["gen", "lego", "--config", cfg.to_str().unwrap(), "--per-skill", "2"]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4 * 2);
    assert!(lines.iter().all(|l| l.starts_with("Input: ") && l.ends_with('.')));
    let again = ok(&skillmix(&["gen", "lego", "--seed", "3", "--k", "4", "--per-skill", "2", "--rendered"]));
    assert_eq!(text, again);

    write_json(&cfg, &json!({"seed": 3, "bogus": 1}));
    assert!(!skillmix(&["gen", "addition", "--config", cfg.to_str().unwrap()]).status.success());
    assert!(!skillmix(&["gen", "addition", "--per-skill", "3"]).status.success());
}

#[test]
fn addition_jsonl_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("add.jsonl");
    ok(&skillmix(&["gen", "addition", "--seed", "1", "--per-skill", "5", "--out", out.to_str().unwrap()]));
    let text = fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().count(), 15);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["skill"], "add1");
}

#[test]
fn recover_generated_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    ok(&skillmix(&[
        "gen", "trajectories", "--k", "4", "--n", "80", "--noise-frac", "0", "--seed", "2", "--out",
        traj.to_str().unwrap(),
    ]));
    let out = skillmix(&["recover", "--input", traj.to_str().unwrap(), "--k", "4", "--seed", "1"]);
    let assignments = ok(&out);
    assert_eq!(assignments.lines().count(), 81);
    assert!(String::from_utf8_lossy(&out.stderr).contains("matched accuracy: 1"));
}

#[test]
fn learn_graph_writes_csv_and_probes() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = sim_spec(dir.path());
    spec["trainer"]["noise_sigma"] = json!(0.0);
    spec["selectors"] = json!([]);
    let cfg = dir.path().join("exp.json");
    write_json(&cfg, &spec);
    let probes = dir.path().join("probes.jsonl");
    let csv = ok(&skillmix(&[
        "learn-graph",
        "brute",
        "--experiment",
        cfg.to_str().unwrap(),
        "--steps",
        "400",
        "--probes",
        probes.to_str().unwrap(),
    ]));
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(fs::read_to_string(&probes).unwrap().lines().count(), 3 + 9);
    let approx = ok(&skillmix(&["learn-graph", "approx", "--experiment", cfg.to_str().unwrap()]));
    assert_eq!(approx.lines().count(), 4);
}
