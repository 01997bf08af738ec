//! Multi-selector experiments with paired seeding.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plots::unique_labels;
use super::{run_rounds_into, Pools};
use crate::domain::{read_samples_jsonl, RunConfig, RunLog, Setting, SkillId, SkillSet, SkillsGraph};
use crate::error::{Error, Result};
use crate::graphlearn::{learn_graph_approximate, learn_graph_bruteforce, GraphLearnConfig, ProbeRecord};
use crate::rng;
use crate::selector::{build_selector, name_identity, SelectorEnv};
use crate::synthgen::{gen_addition, gen_lego, AdditionSpec, LegoSpec};
use crate::trainer::{ExternalTrainer, PlantedGraph, SimDynamics, Trainer};

const TRAINER_STREAM: u64 = 0x5452_4e52;
const GRAPH_STREAM: u64 = 0x4752_5048;
const DATA_STREAM: u64 = 0x4441_5441;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Skill names only; pools are unlimited unless sizes are given.
    Skills {
        train: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool_sizes: Option<Vec<usize>>,
    },
    /// Per-skill samples read from a JSONL file.
    Jsonl { path: PathBuf },
    Lego {
        spec: LegoSpec,
        per_skill: usize,
    },
    Addition {
        spec: AdditionSpec,
        per_skill: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSource {
    LearnBruteforce {
        #[serde(default)]
        config: GraphLearnConfig,
    },
    LearnApproximate {
        #[serde(default)]
        config: GraphLearnConfig,
    },
    Csv { path: PathBuf },
    Inline { weights: Vec<Vec<f64>> },
    /// 1 where a training and an evaluation skill share a name.
    Identity,
    AllOnes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Inline(Vec<Vec<f64>>),
    Planted(PlantedGraph),
    Csv { csv: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialLosses {
    Uniform(f64),
    PerSkill(Vec<f64>),
}

fn one() -> f64 {
    1.0
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainerSpec {
    Sim {
        a_true: MatrixSource,
        l0: InitialLosses,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default = "one")]
        step_scale: f64,
        #[serde(default)]
        use_realized_counts: bool,
        /// Divide `a_true` by its largest entry.
        #[serde(default)]
        rescale: bool,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: Option<String>,
    /// Drives dataset generation, trainer noise and graph probes.
    pub seed: u64,
    pub dataset: DatasetSource,
    /// Evaluation skill names; defaults to the training skills.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_skills: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<Setting>,
    pub graph: GraphSource,
    pub trainer: TrainerSpec,
    pub selectors: Vec<RunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Reads a spec, resolving relative input paths against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut spec: ExperimentSpec = serde_json::from_reader(BufReader::new(file))?;
        if let Some(base) = path.parent() {
            spec.resolve_paths(base);
        }
        Ok(spec)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSource::Jsonl { path } = &mut self.dataset {
            fix(path);
        }
        if let GraphSource::Csv { path } = &mut self.graph {
            fix(path);
        }
        if let TrainerSpec::Sim {
            a_true: MatrixSource::Csv { csv },
            ..
        } = &mut self.trainer
        {
            fix(csv);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.selectors.is_empty() {
            return Err(Error::InvalidConfig("experiment needs at least one selector".into()));
        }
        for c in &self.selectors {
            c.validate()?;
        }
        self.validate_inputs()
    }

    /// Checks that every referenced input file exists.
    pub fn validate_inputs(&self) -> Result<()> {
        let mut paths: Vec<&Path> = Vec::new();
        if let DatasetSource::Jsonl { path } = &self.dataset {
            paths.push(path);
        }
        if let GraphSource::Csv { path } = &self.graph {
            paths.push(path);
        }
        if let TrainerSpec::Sim {
            a_true: MatrixSource::Csv { csv },
            ..
        } = &self.trainer
        {
            paths.push(csv);
        }
        for p in paths {
            if !p.exists() {
                return Err(Error::InvalidConfig(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// This spec restricted to one selector, for persisting next to its log.
    pub fn single(&self, config: &RunConfig) -> ExperimentSpec {
        ExperimentSpec {
            selectors: vec![config.clone()],
            output_dir: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub label: String,
    pub log: RunLog,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub graph: SkillsGraph,
    pub probes: Vec<ProbeRecord>,
    pub runs: Vec<RunOutcome>,
    /// Summary table as CSV text.
    pub summary: String,
}

type Factory = dyn Fn(u64) -> Result<Box<dyn Trainer>> + Sync;

struct Prepared {
    train: Vec<SkillId>,
    eval: Vec<SkillId>,
    pools: Pools,
    graph: SkillsGraph,
    probes: Vec<ProbeRecord>,
    factory: Box<Factory>,
    trainer_seed: u64,
}

fn skill_ids(names: &[String]) -> Result<Vec<SkillId>> {
    names.iter().enumerate().map(|(i, n)| SkillId::new(i, n.clone())).collect()
}

fn load_dataset(spec: &ExperimentSpec) -> Result<(Vec<SkillId>, Pools)> {
    let data_seed = rng::derive_seed(spec.seed, &[DATA_STREAM]);
    let from_set = |set: SkillSet| (set.skills().to_vec(), Pools::new(set.pool_sizes()));
    Ok(match &spec.dataset {
        DatasetSource::Skills { train, pool_sizes } => {
            let ids = skill_ids(train)?;
            if ids.is_empty() {
                return Err(Error::InvalidSkillSet("at least one skill is required".into()));
            }
            let pools = match pool_sizes {
                Some(s) if s.len() != ids.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: ids.len(),
                        got: s.len(),
                    })
                }
                Some(s) => Pools::new(s.clone()),
                None => Pools::unlimited(ids.len()),
            };
            (ids, pools)
        }
        DatasetSource::Jsonl { path } => {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            from_set(SkillSet::from_samples(read_samples_jsonl(BufReader::new(f))?, 0)?)
        }
        DatasetSource::Lego { spec: lego, per_skill } => {
            let lego = LegoSpec {
                seed: rng::derive_seed(data_seed, &[lego.seed]),
                ..lego.clone()
            };
            let counts: BTreeMap<usize, usize> = (1..=lego.max_depth()?).map(|d| (d, *per_skill)).collect();
            from_set(SkillSet::from_samples(gen_lego(&lego, &counts)?, 0)?)
        }
        DatasetSource::Addition { spec: add, per_skill } => {
            let add = AdditionSpec {
                seed: rng::derive_seed(data_seed, &[add.seed]),
                ..add.clone()
            };
            let counts: BTreeMap<usize, usize> = (1..=add.digits).map(|d| (d, *per_skill)).collect();
            from_set(SkillSet::from_samples(gen_addition(&add, &counts)?, 0)?)
        }
    })
}

fn sim_dynamics(trainer: &TrainerSpec, train: &[SkillId], eval: &[SkillId]) -> Result<Option<SimDynamics>> {
    let TrainerSpec::Sim {
        a_true,
        l0,
        noise_sigma,
        step_scale,
        use_realized_counts,
        rescale,
    } = trainer
    else {
        return Ok(None);
    };
    let (k, m) = (train.len(), eval.len());
    let l0 = match l0 {
        InitialLosses::Uniform(v) => vec![*v; m],
        InitialLosses::PerSkill(v) => v.clone(),
    };
    let mut d = match a_true {
        MatrixSource::Planted(p) => {
            if p.k != k || k != m {
                return Err(Error::InvalidConfig(format!(
                    "planted graph has k = {} but the experiment has {k} training and {m} eval skills",
                    p.k
                )));
            }
            p.dynamics(l0, *noise_sigma, 0)?
        }
        source => {
            let a = match source {
                MatrixSource::Inline(a) => a.clone(),
                MatrixSource::Csv { csv } => {
                    let f = File::open(csv).map_err(|e| Error::io(csv, e))?;
                    SkillsGraph::read_csv(f, None)?.rows().to_vec()
                }
                MatrixSource::Planted(_) => unreachable!(),
            };
            if *rescale {
                SimDynamics::rescaled(a, l0, *noise_sigma, 0)?
            } else {
                SimDynamics::new(a, l0, *noise_sigma, 0)?
            }
        }
    };
    if d.k() != k || d.m() != m {
        return Err(Error::InvalidConfig(format!(
            "true graph is {} x {} but the experiment has {k} training and {m} eval skills",
            d.k(),
            d.m()
        )));
    }
    d = d.with_step_scale(*step_scale)?;
    d.use_realized_counts = *use_realized_counts;
    Ok(Some(d))
}

fn prepare(spec: &ExperimentSpec) -> Result<Prepared> {
    spec.validate()?;
    prepare_inputs(spec)
}

/// Resolves the spec's skills, trainer and graph without running any
/// selector; the selector list may be empty.
pub fn learn_graph(spec: &ExperimentSpec) -> Result<(SkillsGraph, Vec<ProbeRecord>)> {
    spec.validate_inputs()?;
    let p = prepare_inputs(spec)?;
    Ok((p.graph, p.probes))
}

fn prepare_inputs(spec: &ExperimentSpec) -> Result<Prepared> {
    let (train, pools) = load_dataset(spec)?;
    let eval = match &spec.eval_skills {
        Some(names) => skill_ids(names)?,
        None => train.clone(),
    };
    let inferred = Setting::infer(&train, &eval)
        .ok_or_else(|| Error::InvalidGraph("train and eval skills partially overlap".into()))?;
    if let Some(s) = spec.setting {
        if s != inferred {
            return Err(Error::InvalidConfig(format!(
                "setting {s:?} does not match the skill sets, which imply {inferred:?}"
            )));
        }
    }

    let factory: Box<Factory> = match &spec.trainer {
        TrainerSpec::Sim { .. } => {
            let d = sim_dynamics(&spec.trainer, &train, &eval)?.expect("sim trainer");
            Box::new(move |seed| {
                let mut d = d.clone();
                d.seed = seed;
                Ok(Box::new(d.trainer()?) as Box<dyn Trainer>)
            })
        }
        TrainerSpec::External { command, timeout_secs } => {
            let command = command.clone();
            let timeout = Duration::from_secs_f64(*timeout_secs);
            let (t, e) = (train.clone(), eval.clone());
            Box::new(move |_seed| {
                Ok(Box::new(ExternalTrainer::spawn(command.clone(), t.clone(), e.clone(), timeout)?)
                    as Box<dyn Trainer>)
            })
        }
    };

    let (k, m) = (train.len(), eval.len());
    let template = SkillsGraph::new(train.clone(), eval.clone(), vec![vec![0.0; m]; k], inferred)?;
    let probe_seed = |cfg: &GraphLearnConfig| GraphLearnConfig {
        seed: rng::derive_seed(spec.seed, &[GRAPH_STREAM, cfg.seed]),
        ..cfg.clone()
    };
    let (graph, probes) = match &spec.graph {
        GraphSource::LearnBruteforce { config } => {
            let out = learn_graph_bruteforce(&train, &eval, &*factory, &probe_seed(config))?;
            let probes = out.probes.clone();
            (out.into_graph()?, probes)
        }
        GraphSource::LearnApproximate { config } => {
            let out = learn_graph_approximate(&train, &eval, &*factory, &probe_seed(config))?;
            let probes = out.probes.clone();
            (out.into_graph()?, probes)
        }
        GraphSource::Csv { path } => {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            let g = SkillsGraph::read_csv(f, Some(inferred))?;
            let names = |s: &[SkillId]| s.iter().map(|x| x.name.clone()).collect::<Vec<_>>();
            if names(g.train_skills()) != names(&train) || names(g.eval_skills()) != names(&eval) {
                return Err(Error::InvalidGraph(format!(
                    "{} does not list the experiment's skills in order",
                    path.display()
                )));
            }
            (g, Vec::new())
        }
        GraphSource::Inline { weights } => (template.with_weights(weights.clone())?, Vec::new()),
        GraphSource::Identity => (name_identity(&template)?, Vec::new()),
        GraphSource::AllOnes => (template.with_weights(vec![vec![1.0; m]; k])?, Vec::new()),
    };

    Ok(Prepared {
        train,
        eval,
        pools,
        graph,
        probes,
        factory,
        trainer_seed: rng::derive_seed(spec.seed, &[TRAINER_STREAM]),
    })
}

impl Prepared {
    fn run(&self, config: &RunConfig, label: String) -> RunOutcome {
        let mut log = RunLog::new(config.clone());
        let result = (|| -> Result<()> {
            let mut trainer = (self.factory)(self.trainer_seed)?;
            trainer.reset()?;
            let initial = trainer.observe()?;
            let sizes: Vec<usize> = if self.pools.unlimited {
                vec![1; self.pools.len()]
            } else {
                self.pools.sizes.clone()
            };
            let env = SelectorEnv {
                graph: &self.graph,
                pool_sizes: &sizes,
                pools_unlimited: self.pools.unlimited,
                initial_losses: &initial,
            };
            let mut selector = build_selector(config, &env)?;
            run_rounds_into(
                &mut log,
                selector.as_mut(),
                trainer.as_mut(),
                &self.pools,
                &self.train,
                &self.eval,
            )
        })();
        RunOutcome {
            label,
            log,
            error: result.err().map(|e| e.to_string()),
        }
    }
}

fn summary_csv(runs: &[RunOutcome], eval: &[SkillId]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["selector".to_string(), "status".into(), "final_mean".into(), "avg_mean".into()];
    header.extend(eval.iter().map(|s| format!("final_{}", s.name)));
    header.extend(eval.iter().map(|s| format!("avg_{}", s.name)));
    w.write_record(&header)?;
    for r in runs {
        let mut row = vec![r.label.clone()];
        match (&r.error, r.log.rounds.is_empty()) {
            (None, false) => {
                let n = r.log.rounds.len() as f64;
                let finals = r.log.final_losses().expect("nonempty");
                let avgs: Vec<f64> = (0..eval.len())
                    .map(|j| r.log.rounds.iter().map(|x| x.after()[j]).sum::<f64>() / n)
                    .collect();
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                row.push("ok".into());
                row.push(mean(&finals).to_string());
                row.push(mean(&avgs).to_string());
                row.extend(finals.iter().map(f64::to_string));
                row.extend(avgs.iter().map(f64::to_string));
            }
            (err, _) => {
                let msg = err.clone().unwrap_or_else(|| "no rounds".into());
                row.push(format!("failed: {msg}"));
                row.extend(std::iter::repeat_n(String::new(), 2 + 2 * eval.len()));
            }
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Runs every selector against its own trainer built from the same seeds.
///
/// A failing run does not stop the others; its summary row is marked.
/// With an output directory the spec, graph, probe log, per-run logs and
/// per-run single-selector specs are written there.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let prepared = prepare(spec)?;
    let labels = unique_labels(spec.selectors.iter().map(RunConfig::label));
    let runs: Vec<RunOutcome> = spec
        .selectors
        .par_iter()
        .zip(labels.par_iter())
        .map(|(c, l)| prepared.run(c, l.clone()))
        .collect();
    let summary = summary_csv(&runs, &prepared.eval)?;

    if let Some(dir) = &spec.output_dir {
        let runs_dir = dir.join("runs");
        fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
        let write = |path: PathBuf, bytes: &[u8]| fs::write(&path, bytes).map_err(|e| Error::io(&path, e));
        write(dir.join("experiment.json"), &serde_json::to_vec_pretty(spec)?)?;
        let mut g = Vec::new();
        prepared.graph.write_csv(&mut g)?;
        write(dir.join("graph.csv"), &g)?;
        if !prepared.probes.is_empty() {
            let mut p = Vec::new();
            for rec in &prepared.probes {
                serde_json::to_writer(&mut p, rec)?;
                p.push(b'\n');
            }
            write(dir.join("probes.jsonl"), &p)?;
        }
        for r in &runs {
            let mut buf = Vec::new();
            r.log.write_jsonl(&mut buf)?;
            write(runs_dir.join(format!("{}.jsonl", r.label)), &buf)?;
            let single = spec.single(&r.log.config);
            write(runs_dir.join(format!("{}.spec.json", r.label)), &serde_json::to_vec_pretty(&single)?)?;
        }
        write(dir.join("summary.csv"), summary.as_bytes())?;
    }

    Ok(ExperimentOutcome {
        graph: prepared.graph,
        probes: prepared.probes,
        runs,
        summary,
    })
}

/// Re-runs the selector that produced `log` under `spec`.
pub fn replay(spec: &ExperimentSpec, log: &RunLog) -> Result<RunLog> {
    let prepared = prepare(spec)?;
    let out = prepared.run(&log.config, log.config.label());
    match out.error {
        None => Ok(out.log),
        Some(e) => Err(Error::Trainer(format!("replay failed: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AllocationMode, SelectorKind, SkillItMode};

    fn spec(selectors: Vec<SelectorKind>) -> ExperimentSpec {
        ExperimentSpec {
            name: None,
            seed: 11,
            dataset: DatasetSource::Skills {
                train: (1..=5).map(|i| format!("s{i}")).collect(),
                pool_sizes: None,
            },
            eval_skills: None,
            setting: None,
            graph: GraphSource::Inline {
                weights: (0..5)
                    .map(|i| (0..5).map(|j| if i == j { 1.0 } else if j == i + 1 { 0.5 } else { 0.0 }).collect())
                    .collect(),
            },
            trainer: TrainerSpec::Sim {
                a_true: MatrixSource::Planted(PlantedGraph::binary(5, 0.3, 4)),
                l0: InitialLosses::Uniform(1.0),
                noise_sigma: 0.02,
                step_scale: 1.0,
                use_realized_counts: false,
                rescale: false,
            },
            selectors: selectors
                .into_iter()
                .map(|s| RunConfig {
                    name: None,
                    eta: 0.5,
                    rounds: 6,
                    samples: 600,
                    window: 3,
                    seed: 3,
                    selector: s,
                    allocation: AllocationMode::LargestRemainder,
                })
                .collect(),
            output_dir: None,
        }
    }

    fn three() -> Vec<SelectorKind> {
        vec![
            SelectorKind::Random,
            SelectorKind::Stratified,
            SelectorKind::SkillIt {
                mode: SkillItMode::Full,
            },
        ]
    }

    #[test]
    fn three_selectors_three_logs() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(three());
        s.output_dir = Some(dir.path().to_path_buf());
        let out = run_experiment(&s).unwrap();
        assert_eq!(out.runs.len(), 3);
        assert!(out.runs.iter().all(|r| r.error.is_none() && r.log.rounds.len() == 6));
        assert_eq!(out.summary.lines().count(), 4);
        for label in ["random", "stratified", "skillit"] {
            assert!(dir.path().join("runs").join(format!("{label}.jsonl")).exists());
        }
        assert!(dir.path().join("summary.csv").exists());
    }

    #[test]
    fn paired_initial_losses_and_deterministic_summary() {
        let a = run_experiment(&spec(three())).unwrap();
        let b = run_experiment(&spec(three())).unwrap();
        assert_eq!(a.summary, b.summary);
        let first: Vec<_> = a.runs.iter().map(|r| r.log.rounds[0].before()).collect();
        assert!(first.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn failures_are_marked() {
        let mut s = spec(vec![
            SelectorKind::Stratified,
            SelectorKind::Fixed {
                mixture: crate::domain::Mixture::uniform(3),
            },
        ]);
        s.selectors[1].name = Some("broken".into());
        let out = run_experiment(&s).unwrap();
        assert!(out.runs[0].error.is_none());
        assert!(out.runs[1].error.is_some());
        let rows: Vec<&str> = out.summary.lines().collect();
        assert!(rows[2].starts_with("broken,\"failed: dimension mismatch"), "{}", rows[2]);
    }

    #[test]
    fn replay_matches() {
        let s = spec(three());
        let out = run_experiment(&s).unwrap();
        for r in &out.runs {
            let again = replay(&s.single(&r.log.config), &r.log).unwrap();
            assert_eq!(again, r.log);
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let s = spec(three());
        let text = serde_json::to_string(&s).unwrap();
        let back: ExperimentSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
