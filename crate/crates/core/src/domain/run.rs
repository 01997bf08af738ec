use std::io::{BufRead, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::mixture::Mixture;
use super::skills::SkillId;
use crate::error::{Error, Result};

/// Validation losses over the evaluation skills at a round boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossState {
    pub losses: Vec<f64>,
    pub round: usize,
}

impl LossState {
    pub fn new(losses: Vec<f64>, round: usize) -> Result<Self> {
        if let Some((j, v)) = losses
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidLosses(format!("loss {j} = {v}")));
        }
        Ok(LossState { losses, round })
    }

    pub fn mean(&self) -> f64 {
        if self.losses.is_empty() {
            0.0
        } else {
            self.losses.iter().sum::<f64>() / self.losses.len() as f64
        }
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumDirection {
    /// Lowest initial loss first.
    Curriculum,
    /// Highest initial loss first.
    Anticurriculum,
}

/// Variants of the online mirror-descent selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillItMode {
    #[default]
    Full,
    /// Replace the graph with the identity matrix.
    NoGraph,
    /// Keep the softmax-initialized mixture for every round.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectorKind {
    /// Uniform draws from the union of all training pools.
    Random,
    /// Uniform over every training skill.
    Stratified,
    /// Uniform over the skills relevant to the evaluation set.
    SkillStratified,
    Curriculum {
        direction: CurriculumDirection,
        epochs: usize,
        #[serde(default)]
        frac_previous: f64,
    },
    SkillIt {
        #[serde(default)]
        mode: SkillItMode,
    },
    /// A fixed mixture for every round.
    Fixed { mixture: Mixture },
}

impl SelectorKind {
    pub fn label(&self) -> String {
        match self {
            SelectorKind::Random => "random".into(),
            SelectorKind::Stratified => "stratified".into(),
            SelectorKind::SkillStratified => "skill_stratified".into(),
            SelectorKind::Curriculum { direction, .. } => match direction {
                CurriculumDirection::Curriculum => "skill_curriculum".into(),
                CurriculumDirection::Anticurriculum => "skill_anticurriculum".into(),
            },
            SelectorKind::SkillIt { mode } => match mode {
                SkillItMode::Full => "skillit".into(),
                SkillItMode::NoGraph => "skillit_no_graph".into(),
                SkillItMode::Static => "skillit_static".into(),
            },
            SelectorKind::Fixed { .. } => "fixed".into(),
        }
    }
}

/// How a round's mixture becomes integer sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    /// Largest-remainder apportionment.
    #[default]
    LargestRemainder,
    /// Multinomial draw of the round budget.
    Multinomial,
}

fn default_window() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Label used for file names and the summary table.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(alias = "η")]
    pub eta: f64,
    #[serde(alias = "T")]
    pub rounds: usize,
    /// Total sample budget across all rounds.
    #[serde(alias = "n")]
    pub samples: usize,
    #[serde(alias = "w", default = "default_window")]
    pub window: usize,
    pub seed: u64,
    pub selector: SelectorKind,
    #[serde(default)]
    pub allocation: AllocationMode,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidConfig(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be >= 1".into()));
        }
        if self.samples < self.rounds {
            return Err(Error::InvalidConfig(format!(
                "sample budget {} is smaller than the number of rounds {}",
                self.samples, self.rounds
            )));
        }
        if self.window == 0 || self.window > self.rounds {
            return Err(Error::InvalidConfig(format!(
                "window must be in 1..={}, got {}",
                self.rounds, self.window
            )));
        }
        if let SelectorKind::Curriculum {
            epochs,
            frac_previous,
            ..
        } = &self.selector
        {
            if *epochs == 0 {
                return Err(Error::InvalidConfig("curriculum epochs must be >= 1".into()));
            }
            if !(0.0..=1.0).contains(frac_previous) {
                return Err(Error::InvalidConfig("frac_previous must be in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.selector.label())
    }

    /// Samples trained in round `round` (1-based): floor(n / T), with the
    /// remainder spread one apiece over the earliest rounds.
    pub fn round_budget(&self, round: usize) -> usize {
        let base = self.samples / self.rounds;
        let extra = self.samples % self.rounds;
        base + usize::from(round <= extra)
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub mixture: Mixture,
    pub allocation: IndexMap<String, usize>,
    pub losses_before: IndexMap<String, f64>,
    pub losses_after: IndexMap<String, f64>,
}

impl RoundRecord {
    pub fn new(
        round: usize,
        mixture: Mixture,
        counts: &[usize],
        train: &[SkillId],
        eval: &[SkillId],
        before: &LossState,
        after: &LossState,
    ) -> Self {
        RoundRecord {
            round,
            mixture,
            allocation: train.iter().map(|s| s.name.clone()).zip(counts.iter().copied()).collect(),
            losses_before: named(eval, &before.losses),
            losses_after: named(eval, &after.losses),
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        self.allocation.values().copied().collect()
    }

    pub fn before(&self) -> Vec<f64> {
        self.losses_before.values().copied().collect()
    }

    pub fn after(&self) -> Vec<f64> {
        self.losses_after.values().copied().collect()
    }
}

pub(crate) fn named(skills: &[SkillId], values: &[f64]) -> IndexMap<String, f64> {
    skills
        .iter()
        .map(|s| s.name.clone())
        .zip(values.iter().copied())
        .collect()
}

/// Append-only record of a selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: RunConfig,
    pub rounds: Vec<RoundRecord>,
}

impl RunLog {
    pub fn new(config: RunConfig) -> Self {
        RunLog {
            config,
            rounds: Vec::new(),
        }
    }

    pub fn push(&mut self, record: RoundRecord) -> Result<()> {
        if let Some(last) = self.rounds.last() {
            if record.round <= last.round {
                return Err(Error::InvalidConfig(format!(
                    "round {} logged after round {}",
                    record.round, last.round
                )));
            }
        }
        self.rounds.push(record);
        Ok(())
    }

    pub fn final_losses(&self) -> Option<Vec<f64>> {
        self.rounds.last().map(RoundRecord::after)
    }

    pub fn final_mean_loss(&self) -> Option<f64> {
        self.final_losses()
            .map(|l| l.iter().sum::<f64>() / l.len().max(1) as f64)
    }

    /// Rounds as JSON lines, one object per round.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.rounds {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io("<runlog>", e))?;
        }
        out.flush().map_err(|e| Error::io("<runlog>", e))?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(config: RunConfig, input: R) -> Result<Self> {
        let mut log = RunLog::new(config);
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<runlog>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RoundRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("runlog line {}: {e}", n + 1)))?;
            log.push(rec)?;
        }
        Ok(log)
    }
}
