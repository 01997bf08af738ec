//! Recovering skills without labels by clustering per-sample loss
//! trajectories collected over several training runs.

mod kmeans;
mod simulate;

use std::io::{BufRead, Write};

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kmeans::{cluster_trajectories, kmeans, KMeansConfig, KMeansFit};
pub use simulate::{run_trajectories, template_trajectories, RunTrajectorySpec, TemplateSpec};

/// Per-sample losses: row `s` holds sample `s`'s loss at every checkpoint
/// of every run, run-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMatrix {
    pub ids: Vec<String>,
    pub runs: usize,
    pub checkpoints: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    n: usize,
    runs: usize,
    checkpoints: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
}

impl TrajectoryMatrix {
    pub fn new(
        ids: Vec<String>,
        runs: usize,
        checkpoints: usize,
        features: Vec<Vec<f64>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if runs == 0 || checkpoints == 0 {
            return Err(Error::InvalidConfig("need at least one run and one checkpoint".into()));
        }
        if ids.len() != features.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: features.len(),
            });
        }
        let d = runs * checkpoints;
        for (s, row) in features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidLosses(format!("sample {} has a missing or non-finite entry", ids[s])));
            }
        }
        if let Some(l) = &labels {
            if l.len() != ids.len() {
                return Err(Error::DimensionMismatch {
                    expected: ids.len(),
                    got: l.len(),
                });
            }
        }
        Ok(TrajectoryMatrix {
            ids,
            runs,
            checkpoints,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Each column shifted to mean 0 and scaled to unit variance; constant
    /// columns become 0.
    pub fn zscored(&self) -> TrajectoryMatrix {
        let n = self.len().max(1) as f64;
        let d = self.runs * self.checkpoints;
        let mut out = self.clone();
        for c in 0..d {
            let mean = self.features.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = self.features.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            for row in &mut out.features {
                row[c] = if sd > 0.0 { (row[c] - mean) / sd } else { 0.0 };
            }
        }
        out
    }

    /// A JSON header line, then one CSV row per sample: id, features.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            n: self.len(),
            runs: self.runs,
            checkpoints: self.checkpoints,
            labels: self.labels.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n").map_err(|e| Error::io("<trajectories>", e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for (id, row) in self.ids.iter().zip(&self.features) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<trajectories>", e))?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Self> {
        let mut first = String::new();
        input
            .read_line(&mut first)
            .map_err(|e| Error::io("<trajectories>", e))?;
        let header: Header =
            serde_json::from_str(first.trim()).map_err(|e| Error::Parse(format!("trajectory header: {e}")))?;
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
        let mut ids = Vec::with_capacity(header.n);
        let mut features = Vec::with_capacity(header.n);
        for rec in r.records() {
            let rec = rec?;
            let mut it = rec.iter();
            let id = it.next().ok_or_else(|| Error::Parse("empty trajectory row".into()))?;
            let row = it
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("sample {id}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            ids.push(id.to_string());
            features.push(row);
        }
        if ids.len() != header.n {
            return Err(Error::Parse(format!("header says {} samples, found {}", header.n, ids.len())));
        }
        TrajectoryMatrix::new(ids, header.runs, header.checkpoints, features, header.labels)
    }
}

/// Fraction of samples whose cluster maps to their label under the best
/// one-to-one cluster/label matching.
pub fn matched_accuracy(assignment: &[usize], labels: &[usize]) -> Result<f64> {
    if assignment.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: assignment.len(),
        });
    }
    if labels.is_empty() {
        return Ok(1.0);
    }
    let size = 1 + assignment.iter().chain(labels).copied().max().unwrap_or(0);
    let mut counts = Matrix::new(size, size, 0i64);
    for (a, l) in assignment.iter().zip(labels) {
        counts[(*a, *l)] += 1;
    }
    let (matched, _) = kuhn_munkres(&counts);
    Ok(matched as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        let labels = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(matched_accuracy(&labels, &labels).unwrap(), 1.0);
        let permuted: Vec<usize> = labels.iter().map(|l| (l + 1) % 3).collect();
        assert_eq!(matched_accuracy(&permuted, &labels).unwrap(), 1.0);
        assert!(matched_accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn ten_percent_swapped() {
        // 50 + 50 points, 5 from each side wrongly placed
        let labels: Vec<usize> = (0..100).map(|i| i / 50).collect();
        let mut assign = labels.clone();
        for i in 0..5 {
            assign[i] = 1;
            assign[50 + i] = 0;
        }
        assert!((matched_accuracy(&assign, &labels).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn file_round_trip() {
        let t = TrajectoryMatrix::new(
            vec!["a".into(), "b".into()],
            1,
            2,
            vec![vec![0.5, 0.25], vec![1.0, 0.125]],
            Some(vec![0, 1]),
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"n\":2,\"runs\":1,\"checkpoints\":2,\"labels\":[0,1]}\n"));
        assert_eq!(TrajectoryMatrix::read(&buf[..]).unwrap(), t);
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(TrajectoryMatrix::new(vec!["a".into()], 1, 2, vec![vec![0.5]], None).is_err());
        assert!(TrajectoryMatrix::new(vec!["a".into()], 1, 1, vec![vec![f64::NAN]], None).is_err());
    }

    #[test]
    fn zscore_columns() {
        let t = TrajectoryMatrix::new(
            vec!["a".into(), "b".into()],
            1,
            2,
            vec![vec![1.0, 5.0], vec![3.0, 5.0]],
            None,
        )
        .unwrap();
        let z = t.zscored();
        assert_eq!(z.features, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
    }
}
