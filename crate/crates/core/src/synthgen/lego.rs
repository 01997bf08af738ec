//! LEGO reasoning-chain samples.
//!
//! A sample is a set of `k` clauses over distinct letter variables. The
//! root variable is assigned a literal bit (`x = val 1`), every other
//! variable copies or negates its parent (`y = not x`). Clauses appear in
//! random order and the query asks for the value of one variable; the
//! skill of a sample is the depth of the queried variable.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Sample;
use crate::error::{Error, Result};
use crate::rng;

const LEGO_STREAM: u64 = 0x4c45_474f;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Structure {
    /// Node `i` depends on node `i - 1`.
    Chain,
    /// `parents[i]` is the parent of node `i`; `parents[0]` must be `None`.
    Tree { parents: Vec<Option<usize>> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegoSpec {
    pub k: usize,
    pub structure: Structure,
    #[serde(default = "default_alphabet")]
    pub alphabet: Vec<char>,
    pub seed: u64,
}

pub fn default_alphabet() -> Vec<char> {
    ('a'..='z').collect()
}

impl LegoSpec {
    pub fn chain(k: usize, seed: u64) -> Self {
        LegoSpec {
            k,
            structure: Structure::Chain,
            alphabet: default_alphabet(),
            seed,
        }
    }

    pub fn tree(parents: Vec<Option<usize>>, seed: u64) -> Self {
        LegoSpec {
            k: parents.len(),
            structure: Structure::Tree { parents },
            alphabet: default_alphabet(),
            seed,
        }
    }

    /// Parent of every node, root first.
    pub fn parents(&self) -> Result<Vec<Option<usize>>> {
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!("LEGO needs k >= 2, got {}", self.k)));
        }
        let mut seen = std::collections::HashSet::new();
        if self.alphabet.len() < self.k
            || self.alphabet.iter().any(|c| !c.is_ascii_lowercase() || !seen.insert(*c))
        {
            return Err(Error::InvalidConfig(format!(
                "alphabet must hold at least {} distinct lowercase letters",
                self.k
            )));
        }
        let parents = match &self.structure {
            Structure::Chain => (0..self.k).map(|i| i.checked_sub(1)).collect(),
            Structure::Tree { parents } => parents.clone(),
        };
        if parents.len() != self.k {
            return Err(Error::InvalidConfig(format!(
                "parent array has {} entries for k = {}",
                parents.len(),
                self.k
            )));
        }
        if parents[0].is_some() {
            return Err(Error::InvalidConfig("node 0 must be the root".into()));
        }
        for (i, p) in parents.iter().enumerate().skip(1) {
            match p {
                None => return Err(Error::InvalidConfig(format!("node {i} has no parent"))),
                Some(p) if *p >= self.k => {
                    return Err(Error::InvalidConfig(format!("node {i} has parent {p} >= k")))
                }
                _ => {}
            }
        }
        // every node must reach the root without revisiting a node
        for start in 0..self.k {
            let mut node = start;
            for _ in 0..self.k {
                match parents[node] {
                    Some(p) => node = p,
                    None => break,
                }
            }
            if node != 0 {
                return Err(Error::InvalidConfig(format!("node {start} is on a cycle")));
            }
        }
        Ok(parents)
    }

    /// Depth of every node, root at depth 1.
    pub fn depths(&self) -> Result<Vec<usize>> {
        let parents = self.parents()?;
        Ok((0..self.k)
            .map(|mut node| {
                let mut d = 1;
                while let Some(p) = parents[node] {
                    node = p;
                    d += 1;
                }
                d
            })
            .collect())
    }

    pub fn max_depth(&self) -> Result<usize> {
        Ok(self.depths()?.into_iter().max().unwrap_or(1))
    }
}

pub fn skill_name(depth: usize) -> String {
    format!("lego{depth}")
}

/// Generates `counts[d]` samples querying a variable at depth `d`, for each
/// requested depth in ascending order.
pub fn gen_lego(spec: &LegoSpec, counts: &BTreeMap<usize, usize>) -> Result<Vec<Sample>> {
    let parents = spec.parents()?;
    let depths = spec.depths()?;
    let max_depth = depths.iter().copied().max().unwrap_or(1);
    for &d in counts.keys() {
        if d == 0 || d > max_depth {
            return Err(Error::SkillOutOfRange {
                index: d,
                max: max_depth,
            });
        }
    }
    let mut out = Vec::with_capacity(counts.values().sum());
    for (&depth, &count) in counts {
        let candidates: Vec<usize> = (0..spec.k).filter(|&i| depths[i] == depth).collect();
        let mut rng = rng::stream(spec.seed, &[LEGO_STREAM, depth as u64]);
        for _ in 0..count {
            out.push(one_sample(spec, &parents, &candidates, depth, &mut rng));
        }
    }
    Ok(out)
}

fn one_sample<R: Rng>(
    spec: &LegoSpec,
    parents: &[Option<usize>],
    candidates: &[usize],
    depth: usize,
    rng: &mut R,
) -> Sample {
    let k = spec.k;
    let vars: Vec<char> = index::sample(rng, spec.alphabet.len(), k)
        .into_iter()
        .map(|i| spec.alphabet[i])
        .collect();
    let root_bit: u8 = rng.random_range(0..=1);
    let negate: Vec<bool> = (0..k).map(|i| i > 0 && rng.random_bool(0.5)).collect();

    // parents need not precede children in a tree, so resolve recursively
    let mut value: Vec<Option<u8>> = vec![None; k];
    value[0] = Some(root_bit);
    for i in 0..k {
        resolve(i, parents, &negate, &mut value);
    }

    let mut clauses: Vec<String> = (0..k)
        .map(|i| match parents[i] {
            None => format!("{} = val {}", vars[i], root_bit),
            Some(p) => format!(
                "{} = {} {}",
                vars[i],
                if negate[i] { "not" } else { "val" },
                vars[p]
            ),
        })
        .collect();
    clauses.shuffle(rng);

    let q = candidates[rng.random_range(0..candidates.len())];
    Sample {
        skill: skill_name(depth),
        input: format!("{}.", clauses.join(", ")),
        output: format!("{} = {}", vars[q], value[q].expect("resolved")),
    }
}

fn resolve(i: usize, parents: &[Option<usize>], negate: &[bool], value: &mut [Option<u8>]) -> u8 {
    if let Some(v) = value[i] {
        return v;
    }
    let p = parents[i].expect("non-root has a parent");
    let pv = resolve(p, parents, negate, value);
    let v = if negate[i] { 1 - pv } else { pv };
    value[i] = Some(v);
    v
}

/// `Input: <clauses>. Output: <var> = <bit>.`
pub fn render(sample: &Sample) -> String {
    format!("Input: {} Output: {}.", sample.input, sample.output)
}

/// Inverse of [`render`]; returns `(input, output)`.
pub fn parse_rendered(line: &str) -> Result<(String, String)> {
    let rest = line
        .trim()
        .strip_prefix("Input: ")
        .ok_or_else(|| Error::Parse(format!("missing `Input:` prefix in {line:?}")))?;
    let (input, output) = rest
        .split_once(" Output: ")
        .ok_or_else(|| Error::Parse(format!("missing `Output:` in {line:?}")))?;
    let output = output
        .strip_suffix('.')
        .ok_or_else(|| Error::Parse(format!("missing terminal period in {line:?}")))?;
    if !input.ends_with('.') {
        return Err(Error::Parse(format!("clauses lack a terminal period in {line:?}")));
    }
    Ok((input.to_string(), output.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(usize, usize)]) -> BTreeMap<usize, usize> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn rejects_depth_beyond_k() {
        let spec = LegoSpec::chain(5, 0);
        assert!(matches!(
            gen_lego(&spec, &counts(&[(6, 1)])),
            Err(Error::SkillOutOfRange { index: 6, max: 5 })
        ));
        assert!(gen_lego(&spec, &counts(&[(0, 1)])).is_err());
    }

    #[test]
    fn tree_validation() {
        assert!(LegoSpec::tree(vec![None, Some(0), Some(0), Some(2)], 0).parents().is_ok());
        assert!(LegoSpec::tree(vec![Some(1), None], 0).parents().is_err());
        assert!(LegoSpec::tree(vec![None, Some(2), Some(1)], 0).parents().is_err());
        let mut short = LegoSpec::chain(5, 0);
        short.alphabet = vec!['a', 'b', 'c'];
        assert!(short.parents().is_err());
    }

    #[test]
    fn tree_depths() {
        let spec = LegoSpec::tree(vec![None, Some(0), Some(0), Some(2)], 0);
        assert_eq!(spec.depths().unwrap(), vec![1, 2, 2, 3]);
        assert!(gen_lego(&spec, &counts(&[(4, 1)])).is_err());
    }

    #[test]
    fn surface_format() {
        let spec = LegoSpec::chain(5, 3);
        let samples = gen_lego(&spec, &counts(&[(1, 3), (5, 3)])).unwrap();
        assert_eq!(samples.len(), 6);
        for s in &samples {
            assert!(s.input.ends_with('.'));
            assert_eq!(s.input.matches(", ").count(), 4);
            let (var, bit) = s.output.split_once(" = ").unwrap();
            assert_eq!(var.len(), 1);
            assert!(bit == "0" || bit == "1");
            assert_eq!(s.input.matches(" = val ").count() + s.input.matches(" = not ").count(), 5);
        }
        assert_eq!(samples[0].skill, "lego1");
        assert_eq!(samples[5].skill, "lego5");
    }

    #[test]
    fn parse_paper_style_line() {
        let line = "Input: b = not y, r = val 1, m = val b, q = val m, y = not r. Output: b = 1.";
        let (input, output) = parse_rendered(line).unwrap();
        assert_eq!(input, "b = not y, r = val 1, m = val b, q = val m, y = not r.");
        assert_eq!(output, "b = 1");
        let s = Sample {
            skill: skill_name(3),
            input,
            output,
        };
        assert_eq!(render(&s), line);
        assert!(parse_rendered("b = 1").is_err());
    }

    #[test]
    fn deterministic() {
        let spec = LegoSpec::chain(4, 42);
        let c = counts(&[(1, 5), (2, 5), (4, 5)]);
        assert_eq!(gen_lego(&spec, &c).unwrap(), gen_lego(&spec, &c).unwrap());
        let other = LegoSpec::chain(4, 43);
        assert_ne!(gen_lego(&spec, &c).unwrap(), gen_lego(&other, &c).unwrap());
    }

    #[test]
    fn adding_a_skill_leaves_others_unchanged() {
        let spec = LegoSpec::chain(4, 9);
        let a = gen_lego(&spec, &counts(&[(2, 4)])).unwrap();
        let b = gen_lego(&spec, &counts(&[(1, 3), (2, 4)])).unwrap();
        assert_eq!(a[..], b[3..]);
    }
}
