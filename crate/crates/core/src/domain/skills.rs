use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A skill's position in its [`SkillSet`] plus a readable label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SkillId {
    pub index: usize,
    pub name: String,
}

impl SkillId {
    pub fn new(index: usize, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidSkillSet(format!("skill {index} has an empty name")));
        }
        Ok(SkillId { index, name })
    }
}

impl std::fmt::Display for SkillId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name)
    }
}

/// One labelled text sample. On disk this is one JSON-lines record with
/// fields `skill`, `input`, `output`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub skill: String,
    pub input: String,
    pub output: String,
}

/// Builds `count` skill ids named `prefix1..prefixN`.
pub fn numbered_skills(prefix: &str, count: usize) -> Vec<SkillId> {
    (0..count)
        .map(|i| SkillId {
            index: i,
            name: format!("{prefix}{}", i + 1),
        })
        .collect()
}

/// An ordered skill set with a training pool and a held-out pool per skill.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillSet {
    skills: Vec<SkillId>,
    pools: Vec<Vec<Sample>>,
    validation: Vec<Vec<Sample>>,
}

impl SkillSet {
    pub fn new(
        skills: Vec<SkillId>,
        pools: Vec<Vec<Sample>>,
        validation: Vec<Vec<Sample>>,
    ) -> Result<Self> {
        if skills.is_empty() {
            return Err(Error::InvalidSkillSet("at least one skill is required".into()));
        }
        check_ids(&skills)?;
        for (label, v) in [("pools", &pools), ("validation", &validation)] {
            if v.len() != skills.len() {
                return Err(Error::InvalidSkillSet(format!(
                    "{label} has {} entries for {} skills",
                    v.len(),
                    skills.len()
                )));
            }
        }
        for (i, skill) in skills.iter().enumerate() {
            for s in pools[i].iter().chain(&validation[i]) {
                if s.skill != skill.name {
                    return Err(Error::InvalidSkillSet(format!(
                        "sample labelled {:?} filed under skill {:?}",
                        s.skill, skill.name
                    )));
                }
                if s.output.is_empty() {
                    return Err(Error::InvalidSkillSet("sample with empty output".into()));
                }
            }
            let train: HashSet<(&str, &str)> = pools[i]
                .iter()
                .map(|s| (s.input.as_str(), s.output.as_str()))
                .collect();
            if validation[i]
                .iter()
                .any(|s| train.contains(&(s.input.as_str(), s.output.as_str())))
            {
                return Err(Error::InvalidSkillSet(format!(
                    "training and validation pools of {:?} overlap",
                    skill.name
                )));
            }
        }
        Ok(SkillSet {
            skills,
            pools,
            validation,
        })
    }

    /// A skill set that carries only names; pools are empty.
    pub fn names_only(skills: Vec<SkillId>) -> Result<Self> {
        let k = skills.len();
        SkillSet::new(skills, vec![Vec::new(); k], vec![Vec::new(); k])
    }

    /// Groups samples by their `skill` label in order of first appearance,
    /// splitting off the last `holdout` samples of each skill for validation.
    pub fn from_samples(samples: Vec<Sample>, holdout: usize) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut grouped: Vec<Vec<Sample>> = Vec::new();
        for s in samples {
            let idx = match names.iter().position(|n| *n == s.skill) {
                Some(i) => i,
                None => {
                    names.push(s.skill.clone());
                    grouped.push(Vec::new());
                    names.len() - 1
                }
            };
            grouped[idx].push(s);
        }
        let mut pools = Vec::with_capacity(grouped.len());
        let mut validation = Vec::with_capacity(grouped.len());
        for mut g in grouped {
            let cut = g.len().saturating_sub(holdout);
            validation.push(g.split_off(cut));
            pools.push(g);
        }
        let skills = names
            .into_iter()
            .enumerate()
            .map(|(i, n)| SkillId::new(i, n))
            .collect::<Result<Vec<_>>>()?;
        SkillSet::new(skills, pools, validation)
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn skills(&self) -> &[SkillId] {
        &self.skills
    }

    pub fn pool(&self, i: usize) -> &[Sample] {
        &self.pools[i]
    }

    pub fn validation(&self, i: usize) -> &[Sample] {
        &self.validation[i]
    }

    pub fn pool_sizes(&self) -> Vec<usize> {
        self.pools.iter().map(Vec::len).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.skills.iter().position(|s| s.name == name)
    }
}

pub(crate) fn check_ids(skills: &[SkillId]) -> Result<()> {
    let mut names = HashSet::new();
    for (pos, s) in skills.iter().enumerate() {
        if s.index != pos {
            return Err(Error::InvalidSkillSet(format!(
                "skill {:?} has index {} at position {pos}",
                s.name, s.index
            )));
        }
        if s.name.is_empty() {
            return Err(Error::InvalidSkillSet(format!("skill {pos} has an empty name")));
        }
        if !names.insert(s.name.as_str()) {
            return Err(Error::InvalidSkillSet(format!("duplicate skill name {:?}", s.name)));
        }
    }
    Ok(())
}

pub fn write_samples_jsonl<W: Write>(mut out: W, samples: &[Sample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn read_samples_jsonl<R: BufRead>(input: R) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        if s.output.is_empty() {
            return Err(Error::Parse(format!("line {}: empty output", n + 1)));
        }
        samples.push(s);
    }
    Ok(samples)
}
