use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use skillmix::graphlearn::{CompareMode, GraphLearnConfig, WeightScheme};
use skillmix::harness::{self, preset, ExperimentSpec, GraphSource};
use skillmix::recover::{cluster_trajectories, matched_accuracy, template_trajectories, KMeansConfig, TemplateSpec};
use skillmix::synthgen::{addition, gen_addition, gen_lego, lego, AdditionSpec, LegoSpec};
use skillmix::trainer::{AdapterRequest, AdapterResponse, Batch, SimDynamics, Trainer};
use skillmix::{normalize, AllocationMode, Mixture, RunLog, Sample};

/// Skill-graph-aware data mixture selection.
///
/// Every subcommand accepts `--config <file.json>` whose keys are the
/// subcommand's long flag names in snake_case; flags given on the command
/// line win over config keys.
#[derive(Parser)]
#[command(name = "skillmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    #[command(subcommand)]
    Gen(Gen),
    /// Learn a skills graph from probe runs.
    LearnGraph {
        method: Method,
        #[command(flatten)]
        args: LearnArgs,
    },
    /// Run every selector of an experiment and write logs and a summary.
    Run(RunArgs),
    /// Cluster per-sample loss trajectories into skills.
    Recover(RecoverArgs),
    /// Plot the run logs of an experiment directory.
    Plot(PlotArgs),
    /// Re-execute a persisted run and compare it to its log.
    Replay(ReplayArgs),
    /// Serve the external-trainer protocol from simulated dynamics.
    #[command(hide = true)]
    SimAdapter {
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum Gen {
    Lego(LegoArgs),
    Addition(AdditionArgs),
    /// Template loss trajectories with known labels.
    Trajectories(TrajectoryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Brute,
    Approx,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct LegoArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Number of variables per sample.
    #[arg(long)]
    k: Option<usize>,
    /// Tree parents, comma-separated, `-` for the root (e.g. `-,0,0,1,1`);
    /// a chain when omitted.
    #[arg(long)]
    tree: Option<String>,
    #[arg(long)]
    per_skill: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write `Input: ... Output: ...` text lines instead of JSONL.
    #[arg(long)]
    rendered: bool,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct AdditionArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    digits: Option<usize>,
    #[arg(long)]
    per_skill: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rendered: bool,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TrajectoryArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    checkpoints: Option<usize>,
    /// Noise std-dev as a fraction of the closest template pair's distance.
    #[arg(long)]
    noise_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct LearnArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Experiment spec providing skills and trainer.
    #[arg(long)]
    experiment: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    approx_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    threshold_loss: Option<f64>,
    #[arg(long, value_parser = parse_scheme)]
    weight_scheme: Option<String>,
    #[arg(long, value_parser = parse_compare)]
    compare_mode: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    order_seed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Graph CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Probe log (JSONL) path.
    #[arg(long)]
    probes: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec (JSON); must contain `seed`.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Applies a named preset's eta, rounds and window to every selector.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_parser = parse_allocation)]
    allocation: Option<String>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RecoverArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Trajectory file: a JSON header line, then `id,losses...` rows.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Standardize each feature column first.
    #[arg(long)]
    zscore: bool,
    /// Assignment CSV path (`id,cluster`); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct PlotArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Experiment output directory holding `runs/`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Defaults to `<run_dir>/plots`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ReplayArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Single-run spec written next to the log (`runs/<label>.spec.json`).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// The run log to compare against; defaults to the spec's sibling.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Where to write the replayed log.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_scheme(s: &str) -> Result<String, String> {
    matches!(s, "binary_half" | "raw_delta")
        .then(|| s.to_string())
        .ok_or_else(|| "expected binary_half or raw_delta".into())
}

fn parse_compare(s: &str) -> Result<String, String> {
    matches!(s, "steps_to_threshold" | "delta")
        .then(|| s.to_string())
        .ok_or_else(|| "expected steps_to_threshold or delta".into())
}

fn parse_allocation(s: &str) -> Result<String, String> {
    matches!(s, "largest_remainder" | "multinomial")
        .then(|| s.to_string())
        .ok_or_else(|| "expected largest_remainder or multinomial".into())
}

/// Overlays the flags actually given onto the config file's keys.
fn merged<T: Serialize + DeserializeOwned>(cli: &T, config: Option<&Path>) -> Result<T> {
    let mut base = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<Value>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Value::Object(Default::default()),
    };
    let Value::Object(map) = &mut base else {
        bail!("config must be a JSON object");
    };
    if let Value::Object(given) = serde_json::to_value(cli)? {
        for (k, v) in given {
            if !(v.is_null() || v == Value::Bool(false)) {
                map.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).context("invalid config")
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn require<T>(v: Option<T>, name: &str) -> Result<T> {
    v.with_context(|| format!("`{name}` is required (flag or config key)"))
}

fn write_samples(samples: &[Sample], out: Option<&Path>, rendered: Option<fn(&Sample) -> String>) -> Result<()> {
    let mut w = output(out)?;
    match rendered {
        Some(render) => {
            for s in samples {
                writeln!(w, "{}", render(s))?;
            }
        }
        None => skillmix::write_samples_jsonl(&mut w, samples)?,
    }
    w.flush()?;
    Ok(())
}

fn parse_parents(s: &str) -> Result<Vec<Option<usize>>> {
    s.split(',')
        .map(|t| match t.trim() {
            "-" | "" => Ok(None),
            n => n.parse().map(Some).with_context(|| format!("bad parent {n:?}")),
        })
        .collect()
}

fn gen_lego_cmd(cli: &LegoArgs) -> Result<()> {
    let a = merged(cli, cli.config.as_deref())?;
    let seed = require(a.seed, "seed")?;
    let spec = match &a.tree {
        Some(t) => LegoSpec::tree(parse_parents(t)?, seed),
        None => LegoSpec::chain(a.k.unwrap_or(5), seed),
    };
    let per = a.per_skill.unwrap_or(1000);
    let counts: BTreeMap<usize, usize> = (1..=spec.max_depth()?).map(|d| (d, per)).collect();
    let samples = gen_lego(&spec, &counts)?;
    write_samples(&samples, a.out.as_deref(), a.rendered.then_some(lego::render as fn(&Sample) -> String))
}

fn gen_addition_cmd(cli: &AdditionArgs) -> Result<()> {
    let a = merged(cli, cli.config.as_deref())?;
    let spec = AdditionSpec {
        digits: a.digits.unwrap_or(3),
        seed: require(a.seed, "seed")?,
    };
    let per = a.per_skill.unwrap_or(1000);
    let counts: BTreeMap<usize, usize> = (1..=spec.digits).map(|d| (d, per)).collect();
    let samples = gen_addition(&spec, &counts)?;
    write_samples(
        &samples,
        a.out.as_deref(),
        a.rendered.then_some(addition::render as fn(&Sample) -> String),
    )
}

fn gen_trajectories_cmd(cli: &TrajectoryArgs) -> Result<()> {
    let a = merged(cli, cli.config.as_deref())?;
    let t = template_trajectories(&TemplateSpec {
        k: a.k.unwrap_or(5),
        n: a.n.unwrap_or(500),
        runs: a.runs.unwrap_or(3),
        checkpoints: a.checkpoints.unwrap_or(10),
        noise_frac: a.noise_frac.unwrap_or(0.05),
        seed: require(a.seed, "seed")?,
    })?;
    let mut w = output(a.out.as_deref())?;
    t.write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn learn_cmd(method: Method, cli: &LearnArgs) -> Result<()> {
    let a = merged(cli, cli.config.as_deref())?;
    let path = require(a.experiment.clone(), "experiment")?;
    let mut spec = ExperimentSpec::from_file(&path)?;
    let mut cfg = match &spec.graph {
        GraphSource::LearnBruteforce { config } | GraphSource::LearnApproximate { config } => config.clone(),
        _ => GraphLearnConfig::default(),
    };
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.approx_steps {
        cfg.approx_steps = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.threshold_loss {
        cfg.threshold_loss = v;
    }
    if let Some(v) = &a.weight_scheme {
        cfg.weight_scheme = serde_json::from_value::<WeightScheme>(Value::String(v.clone()))?;
    }
    if let Some(v) = &a.compare_mode {
        cfg.compare_mode = serde_json::from_value::<CompareMode>(Value::String(v.clone()))?;
    }
    if let Some(v) = a.parallelism {
        cfg.parallelism = v;
    }
    if a.order_seed.is_some() {
        cfg.order_seed = a.order_seed;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    spec.graph = match method {
        Method::Brute => GraphSource::LearnBruteforce { config: cfg },
        Method::Approx => GraphSource::LearnApproximate { config: cfg },
    };
    let (graph, probes) = harness::learn_graph(&spec)?;
    if let Some(p) = &a.probes {
        let mut w = output(Some(p))?;
        for rec in &probes {
            serde_json::to_writer(&mut w, rec)?;
            writeln!(w)?;
        }
        w.flush()?;
    }
    let mut w = output(a.out.as_deref())?;
    graph.write_csv(&mut w)?;
    w.flush()?;
    let report = skillmix::validate_graph(&graph);
    for warning in &report.violations {
        eprintln!("warning: {warning}");
    }
    Ok(())
}

fn run_cmd(a: &RunArgs) -> Result<()> {
    let mut spec = ExperimentSpec::from_file(&a.config)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(d) = &a.output_dir {
        spec.output_dir = Some(d.clone());
    }
    let p = a.preset.as_deref().map(preset).transpose()?;
    let allocation = a
        .allocation
        .as_ref()
        .map(|s| serde_json::from_value::<AllocationMode>(Value::String(s.clone())))
        .transpose()?;
    for c in &mut spec.selectors {
        if let Some(p) = &p {
            c.eta = p.eta;
            c.rounds = p.rounds;
            c.window = p.window;
        }
        c.eta = a.eta.unwrap_or(c.eta);
        c.rounds = a.rounds.unwrap_or(c.rounds);
        c.samples = a.samples.unwrap_or(c.samples);
        c.window = a.window.unwrap_or(c.window);
        c.allocation = allocation.unwrap_or(c.allocation);
    }
    let out = harness::run_experiment(&spec)?;
    print!("{}", out.summary);
    let failed: Vec<&str> = out
        .runs
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.label.as_str())
        .collect();
    if !failed.is_empty() {
        for r in out.runs.iter().filter(|r| r.error.is_some()) {
            eprintln!("{}: {}", r.label, r.error.as_deref().unwrap_or_default());
        }
        bail!("{} run(s) failed: {}", failed.len(), failed.join(", "));
    }
    Ok(())
}

fn recover_cmd(cli: &RecoverArgs) -> Result<()> {
    let a = merged(cli, cli.config.as_deref())?;
    let input = require(a.input.clone(), "input")?;
    let f = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
    let traj = skillmix::recover::TrajectoryMatrix::read(BufReader::new(f))?;
    let defaults = KMeansConfig::default();
    let cfg = KMeansConfig {
        restarts: a.restarts.unwrap_or(defaults.restarts),
        max_iters: a.max_iters.unwrap_or(defaults.max_iters),
        zscore: a.zscore,
    };
    let assign = cluster_trajectories(&traj, require(a.k, "k")?, a.seed.unwrap_or(0), &cfg)?;
    let mut w = output(a.out.as_deref())?;
    writeln!(w, "id,cluster")?;
    for (id, c) in traj.ids.iter().zip(&assign) {
        writeln!(w, "{id},{c}")?;
    }
    w.flush()?;
    if let Some(labels) = &traj.labels {
        eprintln!("matched accuracy: {}", matched_accuracy(&assign, labels)?);
    }
    Ok(())
}

/// `(label, spec path, log path)` for every run persisted under `dir/runs`.
fn persisted_runs(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let runs = dir.join("runs");
    let mut out = Vec::new();
    for entry in fs::read_dir(&runs).with_context(|| format!("listing {}", runs.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(label) = name.strip_suffix(".spec.json") {
            let log = runs.join(format!("{label}.jsonl"));
            if log.exists() {
                out.push((label.to_string(), path.clone(), log));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn read_log(spec: &ExperimentSpec, path: &Path) -> Result<RunLog> {
    let config = spec.selectors.first().context("spec has no selector")?.clone();
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(RunLog::read_jsonl(config, BufReader::new(f))?)
}

fn plot_cmd(cli: &PlotArgs) -> Result<()> {
    let a = merged(cli, cli.config.as_deref())?;
    let dir = require(a.run_dir.clone(), "run_dir")?;
    let mut logs = Vec::new();
    for (_, spec, log) in persisted_runs(&dir)? {
        let spec = ExperimentSpec::from_file(&spec)?;
        logs.push(read_log(&spec, &log)?);
    }
    let out = a.out.clone().unwrap_or_else(|| dir.join("plots"));
    let files = harness::export_plots(&logs, &out)?;
    for f in files.series.iter().chain(&files.loss_charts).chain(&files.mixture_charts) {
        println!("{}", f.display());
    }
    Ok(())
}

fn replay_cmd(cli: &ReplayArgs) -> Result<bool> {
    let a = merged(cli, cli.config.as_deref())?;
    let spec_path = require(a.spec.clone(), "spec")?;
    let log_path = match &a.log {
        Some(p) => p.clone(),
        None => {
            let name = spec_path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let label = name.strip_suffix(".spec.json").context("cannot infer the log path; pass --log")?;
            spec_path.with_file_name(format!("{label}.jsonl"))
        }
    };
    let spec = ExperimentSpec::from_file(&spec_path)?;
    let stored = fs::read(&log_path).with_context(|| format!("reading {}", log_path.display()))?;
    let original = read_log(&spec, &log_path)?;
    let again = harness::replay(&spec, &original)?;
    let mut bytes = Vec::new();
    again.write_jsonl(&mut bytes)?;
    if let Some(out) = &a.out {
        let mut w = output(Some(out))?;
        w.write_all(&bytes)?;
        w.flush()?;
    }
    if bytes == stored {
        println!("identical: {} rounds", again.rounds.len());
        Ok(true)
    } else {
        let first = stored
            .split(|b| *b == b'\n')
            .zip(bytes.split(|b| *b == b'\n'))
            .position(|(x, y)| x != y)
            .map_or(0, |i| i + 1);
        println!("differs from the stored log at line {first}");
        Ok(false)
    }
}

#[derive(Deserialize)]
struct AdapterConfig {
    dynamics: SimDynamics,
    train: Vec<String>,
    eval: Vec<String>,
}

/// Answers one request per stdin line until EOF; an all-zero allocation
/// only reports the current losses.
fn sim_adapter(config: &Path) -> Result<()> {
    let cfg: AdapterConfig = serde_json::from_str(&fs::read_to_string(config)?)?;
    let mut trainer = cfg.dynamics.trainer()?;
    trainer.reset()?;
    let stdout = io::stdout();
    for line in io::stdin().lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: AdapterRequest = serde_json::from_str(&line)?;
        let counts: Vec<usize> = cfg
            .train
            .iter()
            .map(|s| req.allocation.get(s).copied().unwrap_or(0))
            .collect();
        if counts.iter().any(|c| *c > 0) {
            let w: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
            let mixture: Mixture = normalize(&w)?;
            trainer.step(&Batch {
                round: req.round,
                counts,
                mixture,
            })?;
        }
        let losses = trainer.observe()?;
        let resp = AdapterResponse {
            round: req.round,
            losses: cfg.eval.iter().cloned().zip(losses.losses).collect(),
        };
        let mut out = stdout.lock();
        serde_json::to_writer(&mut out, &resp)?;
        writeln!(out)?;
        out.flush()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(Gen::Lego(a)) => gen_lego_cmd(a),
        Command::Gen(Gen::Addition(a)) => gen_addition_cmd(a),
        Command::Gen(Gen::Trajectories(a)) => gen_trajectories_cmd(a),
        Command::LearnGraph { method, args } => learn_cmd(*method, args),
        Command::Run(a) => run_cmd(a),
        Command::Recover(a) => recover_cmd(a),
        Command::Plot(a) => plot_cmd(a),
        Command::Replay(a) => match replay_cmd(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
        Command::SimAdapter { config } => sim_adapter(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
