//! Learning the skills graph from probe training runs.
//!
//! Every probe starts from a fresh base-model trainer, trains for a fixed
//! number of steps on one skill or a balanced pair, and records the losses
//! before and after. The brute-force learner compares pair probes against
//! single-skill probes; the approximate learner reads edges directly off
//! the single-skill probes and so also works when evaluation skills have no
//! training data of their own.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Mixture, Setting, SkillId, SkillsGraph};
use crate::error::{Error, Result};
use crate::rng;
use crate::trainer::{Batch, Trainer};

/// Deltas closer than this are treated as ties.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Edges weigh 0.5, self-edges 1.0.
    BinaryHalf,
    /// Edges weigh the (clamped) loss improvement they produced.
    RawDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    /// Compare how much of skill j's own data each probe needed to reach
    /// the threshold loss; fall back to deltas when neither reached it.
    StepsToThreshold,
    /// Compare loss deltas after the full probe.
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphLearnConfig {
    /// Steps per brute-force probe.
    pub steps: usize,
    /// Steps per approximate probe.
    pub approx_steps: usize,
    /// Samples per training step.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_threshold")]
    pub threshold_loss: f64,
    pub weight_scheme: WeightScheme,
    pub compare_mode: CompareMode,
    /// Worker threads for probes; 1 runs them in order.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Shuffles probe execution order when set.
    #[serde(default)]
    pub order_seed: Option<u64>,
    /// Base seed for per-probe trainer seeds.
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    2
}

fn default_threshold() -> f64 {
    0.01
}

fn default_parallelism() -> usize {
    1
}

impl Default for GraphLearnConfig {
    fn default() -> Self {
        GraphLearnConfig {
            steps: 1000,
            approx_steps: 100,
            batch_size: default_batch(),
            threshold_loss: default_threshold(),
            weight_scheme: WeightScheme::BinaryHalf,
            compare_mode: CompareMode::StepsToThreshold,
            parallelism: 1,
            order_seed: None,
            seed: 0,
        }
    }
}

impl GraphLearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("probe steps H must be >= 1".into()));
        }
        if self.approx_steps > self.steps {
            return Err(Error::InvalidConfig("approximate steps h must not exceed H".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.threshold_loss > 0.0) {
            return Err(Error::InvalidConfig("threshold_loss must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Single,
    Pair,
    Approx,
}

/// Identity of a probe; also keys its trainer seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProbeKey {
    pub kind: ProbeKind,
    /// Training skills; for pairs `(i, j)` with `j` the evaluated skill.
    pub skills: (usize, usize),
}

impl ProbeKey {
    pub fn seed(&self, base: u64) -> u64 {
        let kind = match self.kind {
            ProbeKind::Single => 1,
            ProbeKind::Pair => 2,
            ProbeKind::Approx => 3,
        };
        rng::derive_seed(base, &[kind, self.skills.0 as u64, self.skills.1 as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub kind: ProbeKind,
    pub skills: Vec<String>,
    pub steps: usize,
    pub counts: Vec<usize>,
    pub losses_before: Vec<f64>,
    pub losses_after: Vec<f64>,
    /// Per evaluation skill, the first step whose loss was at or below the threshold.
    pub threshold_step: Vec<Option<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ProbeRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn delta(&self, j: usize) -> f64 {
        self.losses_before[j] - self.losses_after[j]
    }
}

/// All probe records, plus the graph when every probe succeeded.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub graph: Option<SkillsGraph>,
    pub probes: Vec<ProbeRecord>,
}

impl LearnOutcome {
    pub fn into_graph(self) -> Result<SkillsGraph> {
        match self.graph {
            Some(g) => Ok(g),
            None => {
                let failed: Vec<String> = self
                    .probes
                    .iter()
                    .filter_map(|p| p.error.as_ref().map(|e| format!("{:?} {:?}: {e}", p.kind, p.skills)))
                    .collect();
                Err(Error::Trainer(format!("{} probe(s) failed: {}", failed.len(), failed.join("; "))))
            }
        }
    }

    /// One JSON object per probe.
    pub fn write_probe_log<W: Write>(&self, mut out: W) -> Result<()> {
        for p in &self.probes {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n").map_err(|e| Error::io("<probe log>", e))?;
        }
        Ok(())
    }
}

struct ProbePlan {
    key: ProbeKey,
    counts: Vec<usize>,
    mixture: Mixture,
    steps: usize,
}

fn single_plan(kind: ProbeKind, i: usize, k: usize, batch: usize, steps: usize) -> ProbePlan {
    let mut counts = vec![0; k];
    counts[i] = batch;
    let mut p = vec![0.0; k];
    p[i] = 1.0;
    ProbePlan {
        key: ProbeKey { kind, skills: (i, i) },
        counts,
        mixture: Mixture::new(p).expect("unit vector"),
        steps,
    }
}

/// Balanced pair batch; the odd sample goes to `j`.
fn pair_plan(i: usize, j: usize, k: usize, batch: usize, steps: usize) -> ProbePlan {
    if i == j {
        let mut plan = single_plan(ProbeKind::Pair, j, k, batch, steps);
        plan.key.skills = (i, j);
        return plan;
    }
    let mut counts = vec![0; k];
    counts[i] = batch / 2;
    counts[j] = batch - batch / 2;
    let mut p = vec![0.0; k];
    p[i] = 0.5;
    p[j] = 0.5;
    ProbePlan {
        key: ProbeKey {
            kind: ProbeKind::Pair,
            skills: (i, j),
        },
        counts,
        mixture: Mixture::new(p).expect("balanced pair"),
        steps,
    }
}

fn run_probe<T: Trainer>(
    plan: &ProbePlan,
    names: &[SkillId],
    threshold: f64,
    factory: &(dyn Fn(u64) -> Result<T> + Sync),
    base_seed: u64,
) -> ProbeRecord {
    let skills = if plan.key.skills.0 == plan.key.skills.1 {
        vec![names[plan.key.skills.0].name.clone()]
    } else {
        vec![
            names[plan.key.skills.0].name.clone(),
            names[plan.key.skills.1].name.clone(),
        ]
    };
    let mut record = ProbeRecord {
        kind: plan.key.kind,
        skills,
        steps: plan.steps,
        counts: plan.counts.clone(),
        losses_before: Vec::new(),
        losses_after: Vec::new(),
        threshold_step: Vec::new(),
        error: None,
    };
    let result = (|| -> Result<()> {
        let mut trainer = factory(plan.key.seed(base_seed))?;
        trainer.reset()?;
        let before = trainer.observe()?;
        let mut hit: Vec<Option<usize>> = before
            .losses
            .iter()
            .map(|l| (*l <= threshold).then_some(0))
            .collect();
        let batch = Batch {
            round: 0,
            counts: plan.counts.clone(),
            mixture: plan.mixture.clone(),
        };
        let mut last = before.clone();
        for step in 1..=plan.steps {
            trainer.step(&batch)?;
            last = trainer.observe()?;
            for (h, l) in hit.iter_mut().zip(&last.losses) {
                if h.is_none() && *l <= threshold {
                    *h = Some(step);
                }
            }
        }
        record.losses_before = before.losses;
        record.losses_after = last.losses;
        record.threshold_step = hit;
        Ok(())
    })();
    if let Err(e) = result {
        record.error = Some(e.to_string());
    }
    record
}

fn run_all<T: Trainer>(
    plans: &[ProbePlan],
    names: &[SkillId],
    cfg: &GraphLearnConfig,
    factory: &(dyn Fn(u64) -> Result<T> + Sync),
) -> Result<Vec<ProbeRecord>> {
    let mut order: Vec<usize> = (0..plans.len()).collect();
    if let Some(seed) = cfg.order_seed {
        order.shuffle(&mut rng::stream(seed, &[0x4f52_4445]));
    }
    let run = |&idx: &usize| {
        (
            idx,
            run_probe(&plans[idx], names, cfg.threshold_loss, factory, cfg.seed),
        )
    };
    let mut results: Vec<(usize, ProbeRecord)> = if cfg.parallelism > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallelism)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        pool.install(|| order.par_iter().map(run).collect())
    } else {
        order.iter().map(run).collect()
    };
    results.sort_by_key(|(idx, _)| *idx);
    Ok(results.into_iter().map(|(_, r)| r).collect())
}

/// Pairwise learner; requires every evaluation skill to be a training skill.
///
/// Runs one single-skill probe per evaluation skill and one pair probe per
/// (training skill, evaluation skill), `m + k * m` probes in all.
pub fn learn_graph_bruteforce<T: Trainer>(
    train: &[SkillId],
    eval: &[SkillId],
    factory: &(dyn Fn(u64) -> Result<T> + Sync),
    cfg: &GraphLearnConfig,
) -> Result<LearnOutcome> {
    cfg.validate()?;
    let k = train.len();
    let eval_train: Vec<usize> = eval
        .iter()
        .map(|e| {
            train.iter().position(|t| t.name == e.name).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "brute-force learning needs eval skill {:?} among the training skills",
                    e.name
                ))
            })
        })
        .collect::<Result<_>>()?;
    let setting = if eval.len() == k {
        Setting::Continual
    } else {
        Setting::FineTune
    };

    let mut plans = Vec::new();
    for &jt in &eval_train {
        plans.push(single_plan(ProbeKind::Single, jt, k, cfg.batch_size, cfg.steps));
    }
    for &jt in &eval_train {
        for i in 0..k {
            plans.push(pair_plan(i, jt, k, cfg.batch_size, cfg.steps));
        }
    }
    let probes = run_all(&plans, train, cfg, factory)?;
    if probes.iter().any(|p| !p.ok()) {
        return Ok(LearnOutcome { graph: None, probes });
    }

    let m = eval.len();
    if let Some(p) = probes.iter().find(|p| p.losses_after.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: p.losses_after.len(),
        });
    }
    let mut a = vec![vec![0.0; m]; k];
    for (j, &jt) in eval_train.iter().enumerate() {
        let single = &probes[j];
        let own_single = single.counts[jt];
        for i in 0..k {
            if i == jt {
                a[i][j] = match cfg.weight_scheme {
                    WeightScheme::BinaryHalf => 1.0,
                    WeightScheme::RawDelta => single.delta(j).max(0.0),
                };
                continue;
            }
            let pair = &probes[m + j * k + i];
            let own_pair = pair.counts[jt];
            let edge = match cfg.compare_mode {
                CompareMode::Delta => pair.delta(j) > single.delta(j) + TIE_TOL,
                CompareMode::StepsToThreshold => {
                    match (single.threshold_step[j], pair.threshold_step[j]) {
                        (Some(s), Some(p)) => p * own_pair < s * own_single,
                        (None, Some(_)) => true,
                        (Some(_), None) => false,
                        (None, None) => pair.delta(j) > single.delta(j) + TIE_TOL,
                    }
                }
            };
            if edge {
                a[i][j] = match cfg.weight_scheme {
                    WeightScheme::BinaryHalf => 0.5,
                    WeightScheme::RawDelta => pair.delta(j).max(0.0),
                };
            }
        }
    }
    let graph = SkillsGraph::new(train.to_vec(), eval.to_vec(), a, setting)?;
    Ok(LearnOutcome {
        graph: Some(graph),
        probes,
    })
}

/// Linear-time learner: one probe per training skill.
pub fn learn_graph_approximate<T: Trainer>(
    train: &[SkillId],
    eval: &[SkillId],
    factory: &(dyn Fn(u64) -> Result<T> + Sync),
    cfg: &GraphLearnConfig,
) -> Result<LearnOutcome> {
    cfg.validate()?;
    let setting = Setting::infer(train, eval)
        .ok_or_else(|| Error::InvalidGraph("train and eval skills partially overlap".into()))?;
    let k = train.len();
    let plans: Vec<ProbePlan> = (0..k)
        .map(|i| single_plan(ProbeKind::Approx, i, k, cfg.batch_size, cfg.approx_steps))
        .collect();
    let probes = run_all(&plans, train, cfg, factory)?;
    if probes.iter().any(|p| !p.ok()) {
        return Ok(LearnOutcome { graph: None, probes });
    }
    let m = eval.len();
    let self_col: Vec<Option<usize>> = eval
        .iter()
        .map(|e| train.iter().position(|t| t.name == e.name))
        .collect();
    let mut a = vec![vec![0.0; m]; k];
    for (i, probe) in probes.iter().enumerate() {
        if probe.losses_after.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: probe.losses_after.len(),
            });
        }
        for j in 0..m {
            let d = probe.delta(j);
            a[i][j] = match cfg.weight_scheme {
                WeightScheme::RawDelta => d.max(0.0),
                WeightScheme::BinaryHalf if d > 0.0 => {
                    if self_col[j] == Some(i) {
                        1.0
                    } else {
                        0.5
                    }
                }
                WeightScheme::BinaryHalf => 0.0,
            };
        }
    }
    let graph = SkillsGraph::new(train.to_vec(), eval.to_vec(), a, setting)?;
    Ok(LearnOutcome {
        graph: Some(graph),
        probes,
    })
}
