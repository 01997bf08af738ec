use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-sum invariant of a [`Mixture`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex: per-skill sampling proportions for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Mixture(Vec<f64>);

impl Mixture {
    /// Wraps an existing probability vector, checking nonnegativity and unit sum.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidMixture("empty mixture".into()));
        }
        if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidMixture(format!("entry {i} = {v}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidMixture(format!("entries sum to {sum}")));
        }
        Ok(Mixture(p))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform mixture over zero skills");
        Mixture(vec![1.0 / k as f64; k])
    }

    /// Uniform over `support`, exactly zero elsewhere.
    pub fn uniform_over(k: usize, support: &[usize]) -> Result<Self> {
        let mut w = vec![0.0; k];
        for &i in support {
            if i >= k {
                return Err(Error::SkillOutOfRange { index: i, max: k - 1 });
            }
            w[i] = 1.0;
        }
        normalize(&w)
    }

    /// Softmax of log-space weights, shifted by the max so nothing overflows.
    pub fn from_log_weights(log_w: &[f64]) -> Result<Self> {
        if log_w.is_empty() || log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::DegenerateWeights);
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateWeights);
        }
        let w: Vec<f64> = log_w.iter().map(|v| (v - max).exp()).collect();
        normalize(&w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Mixture {
    type Error = Error;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        Mixture::new(p)
    }
}

impl From<Mixture> for Vec<f64> {
    fn from(m: Mixture) -> Self {
        m.0
    }
}

impl std::ops::Index<usize> for Mixture {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Projects a nonnegative weight vector onto the simplex by dividing by its sum.
pub fn normalize(weights: &[f64]) -> Result<Mixture> {
    if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    Ok(Mixture(weights.iter().map(|w| w / sum).collect()))
}

/// Index of the first maximal entry.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
