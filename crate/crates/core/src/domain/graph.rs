use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::skills::{check_ids, SkillId};
use crate::error::{Error, Result};

/// Relation between the training and evaluation skill sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Evaluation skills are the training skills.
    Continual,
    /// Evaluation skills are a strict subset of the training skills.
    FineTune,
    /// Evaluation and training skills are disjoint.
    OutOfDomain,
}

impl Setting {
    /// Infers the setting from the two name lists, if they fit one.
    pub fn infer(train: &[SkillId], eval: &[SkillId]) -> Option<Setting> {
        let t: HashSet<&str> = train.iter().map(|s| s.name.as_str()).collect();
        let e: HashSet<&str> = eval.iter().map(|s| s.name.as_str()).collect();
        if t == e {
            Some(Setting::Continual)
        } else if e.is_subset(&t) {
            Some(Setting::FineTune)
        } else if e.is_disjoint(&t) {
            Some(Setting::OutOfDomain)
        } else {
            None
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continual" => Ok(Setting::Continual),
            "fine_tune" | "fine-tune" => Ok(Setting::FineTune),
            "out_of_domain" | "out-of-domain" => Ok(Setting::OutOfDomain),
            other => Err(Error::Parse(format!("unknown setting {other:?}"))),
        }
    }
}

/// Coarse density label of a graph; reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityClass {
    Empty,
    Intermediate,
    Complete,
}

/// Directed weighted skills graph, stored densely as a k x m matrix whose
/// rows are training skills and columns evaluation skills.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillsGraph {
    train_skills: Vec<SkillId>,
    eval_skills: Vec<SkillId>,
    weights: Vec<Vec<f64>>,
    setting: Setting,
}

impl SkillsGraph {
    /// Builds a graph, clamping negative and non-finite weights to zero.
    /// Setting relations are not enforced here; see [`validate_graph`].
    pub fn new(
        train_skills: Vec<SkillId>,
        eval_skills: Vec<SkillId>,
        matrix: Vec<Vec<f64>>,
        setting: Setting,
    ) -> Result<Self> {
        if train_skills.is_empty() || eval_skills.is_empty() {
            return Err(Error::InvalidGraph("graph needs at least one skill on each side".into()));
        }
        check_ids(&train_skills)?;
        check_ids(&eval_skills)?;
        if matrix.len() != train_skills.len() {
            return Err(Error::DimensionMismatch {
                expected: train_skills.len(),
                got: matrix.len(),
            });
        }
        let weights = matrix
            .into_iter()
            .map(|row| {
                if row.len() != eval_skills.len() {
                    return Err(Error::DimensionMismatch {
                        expected: eval_skills.len(),
                        got: row.len(),
                    });
                }
                Ok(row
                    .into_iter()
                    .map(|v| if v.is_finite() { v.max(0.0) } else { 0.0 })
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(SkillsGraph {
            train_skills,
            eval_skills,
            weights,
            setting,
        })
    }

    /// Continual-setting graph over `skills`.
    pub fn continual(skills: Vec<SkillId>, matrix: Vec<Vec<f64>>) -> Result<Self> {
        SkillsGraph::new(skills.clone(), skills, matrix, Setting::Continual)
    }

    pub fn identity(skills: Vec<SkillId>) -> Self {
        let k = skills.len();
        let m = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        SkillsGraph::continual(skills, m).expect("identity graph is well formed")
    }

    pub fn all_ones(skills: Vec<SkillId>) -> Self {
        let k = skills.len();
        SkillsGraph::continual(skills, vec![vec![1.0; k]; k]).expect("all-ones graph is well formed")
    }

    /// Same skills and setting, different weights.
    pub fn with_weights(&self, matrix: Vec<Vec<f64>>) -> Result<Self> {
        SkillsGraph::new(
            self.train_skills.clone(),
            self.eval_skills.clone(),
            matrix,
            self.setting,
        )
    }

    pub fn train_skills(&self) -> &[SkillId] {
        &self.train_skills
    }

    pub fn eval_skills(&self) -> &[SkillId] {
        &self.eval_skills
    }

    pub fn setting(&self) -> Setting {
        self.setting
    }

    pub fn k(&self) -> usize {
        self.train_skills.len()
    }

    pub fn m(&self) -> usize {
        self.eval_skills.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.weights.iter().map(|r| r[j]).collect()
    }

    /// Row sums over every evaluation skill, diagonal included.
    pub fn row_sums(&self) -> Vec<f64> {
        self.weights.iter().map(|r| r.iter().sum()).collect()
    }

    /// For each evaluation column, the index of the training skill with the same name.
    pub fn eval_in_train(&self) -> Vec<Option<usize>> {
        self.eval_skills
            .iter()
            .map(|e| self.train_skills.iter().position(|t| t.name == e.name))
            .collect()
    }

    /// Fraction of nonzero entries, excluding cells that pair a skill with itself.
    pub fn density(&self) -> f64 {
        let self_col = self.eval_in_train();
        let mut total = 0usize;
        let mut nonzero = 0usize;
        for (i, row) in self.weights.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                if self_col[j] == Some(i) {
                    continue;
                }
                total += 1;
                if *w > 0.0 {
                    nonzero += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            nonzero as f64 / total as f64
        }
    }

    pub fn density_class(&self) -> DensityClass {
        let d = self.density();
        if d <= 0.0 {
            DensityClass::Empty
        } else if d >= 1.0 {
            DensityClass::Complete
        } else {
            DensityClass::Intermediate
        }
    }

    /// Writes the adjacency CSV: header of evaluation skill names, first
    /// column of training skill names.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["skill".to_string()];
        header.extend(self.eval_skills.iter().map(|s| s.name.clone()));
        w.write_record(&header)?;
        for (skill, row) in self.train_skills.iter().zip(&self.weights) {
            let mut rec = vec![skill.name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads the adjacency CSV. When `setting` is `None` it is inferred
    /// from the skill names.
    pub fn read_csv<R: Read>(input: R, setting: Option<Setting>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = r.headers()?.clone();
        let eval: Vec<SkillId> = header
            .iter()
            .skip(1)
            .enumerate()
            .map(|(i, n)| SkillId::new(i, n.trim()))
            .collect::<Result<_>>()?;
        let mut train = Vec::new();
        let mut matrix = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let name = rec.get(0).unwrap_or_default().trim();
            train.push(SkillId::new(i, name)?);
            let row = rec
                .iter()
                .skip(1)
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {name:?}: {c:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            matrix.push(row);
        }
        let setting = match setting {
            Some(s) => s,
            None => Setting::infer(&train, &eval).ok_or_else(|| {
                Error::InvalidGraph("train and eval skills partially overlap".into())
            })?,
        };
        SkillsGraph::new(train, eval, matrix, setting)
    }
}

/// Outcome of [`validate_graph`]; empty means the graph is consistent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub violations: Vec<String>,
}

impl GraphReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the setting-specific skill-set relation and nonnegativity,
/// reporting every violation found.
pub fn validate_graph(graph: &SkillsGraph) -> GraphReport {
    let mut violations = Vec::new();
    let train: HashSet<&str> = graph.train_skills.iter().map(|s| s.name.as_str()).collect();
    let eval: HashSet<&str> = graph.eval_skills.iter().map(|s| s.name.as_str()).collect();
    match graph.setting {
        Setting::Continual => {
            let same_order = graph.train_skills.len() == graph.eval_skills.len()
                && graph
                    .train_skills
                    .iter()
                    .zip(&graph.eval_skills)
                    .all(|(a, b)| a.name == b.name);
            if !same_order {
                violations.push("continual setting requires eval skills == train skills".into());
            }
        }
        Setting::FineTune => {
            if !eval.is_subset(&train) {
                violations.push("eval skills must be drawn from train skills".into());
            }
            if eval.len() >= train.len() {
                violations.push("eval must be strict subset of train skills".into());
            }
        }
        Setting::OutOfDomain => {
            let shared: Vec<&str> = eval.intersection(&train).copied().collect();
            if !shared.is_empty() {
                violations.push(format!("train/eval overlap: {}", shared.join(", ")));
            }
        }
    }
    for (i, row) in graph.weights.iter().enumerate() {
        for (j, w) in row.iter().enumerate() {
            if !(w.is_finite() && *w >= 0.0) {
                violations.push(format!("negative or non-finite weight at ({i}, {j}): {w}"));
            }
        }
    }
    GraphReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::skills::numbered_skills;

    #[test]
    fn continual_ok() {
        let g = SkillsGraph::identity(numbered_skills("s", 3));
        assert!(validate_graph(&g).is_ok());
    }

    #[test]
    fn fine_tune_with_full_eval_is_flagged() {
        let s = numbered_skills("s", 3);
        let g = SkillsGraph::new(s.clone(), s, vec![vec![0.0; 3]; 3], Setting::FineTune).unwrap();
        let report = validate_graph(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| v.contains("eval must be strict subset")));
    }

    #[test]
    fn out_of_domain_overlap_is_flagged() {
        let train = numbered_skills("s", 3);
        let eval = vec![SkillId::new(0, "s2").unwrap(), SkillId::new(1, "e1").unwrap()];
        let g = SkillsGraph::new(train, eval, vec![vec![0.0; 2]; 3], Setting::OutOfDomain).unwrap();
        let report = validate_graph(&g);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].contains("train/eval overlap"));
    }

    #[test]
    fn density_ignores_self_cells() {
        let s = numbered_skills("s", 3);
        assert_eq!(SkillsGraph::identity(s.clone()).density(), 0.0);
        assert_eq!(SkillsGraph::all_ones(s.clone()).density_class(), DensityClass::Complete);
        let g = SkillsGraph::continual(
            s,
            vec![vec![1.0, 0.5, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        )
        .unwrap();
        assert!((g.density() - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(g.density_class(), DensityClass::Intermediate);
    }

    #[test]
    fn csv_round_trip_infers_setting() {
        let train = numbered_skills("t", 2);
        let eval = vec![SkillId::new(0, "e1").unwrap()];
        let g = SkillsGraph::new(train, eval, vec![vec![0.25], vec![1.5]], Setting::OutOfDomain)
            .unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "skill,e1\nt1,0.25\nt2,1.5\n");
        let back = SkillsGraph::read_csv(&buf[..], None).unwrap();
        assert_eq!(back, g);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn construction_clamps_negatives(
                m in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 3)
            ) {
                let g = SkillsGraph::continual(numbered_skills("s", 3), m.clone()).unwrap();
                for i in 0..3 {
                    for j in 0..3 {
                        prop_assert_eq!(g.weight(i, j), m[i][j].max(0.0));
                    }
                }
                prop_assert!(validate_graph(&g).is_ok());
            }
        }
    }
}
