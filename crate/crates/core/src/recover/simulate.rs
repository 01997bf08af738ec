//! Constructed trajectory instances with known skill labels.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::TrajectoryMatrix;
use crate::error::{Error, Result};
use crate::rng;
use crate::trainer::SimDynamics;

/// `k` per-skill template trajectories plus isotropic Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSpec {
    pub k: usize,
    pub n: usize,
    pub runs: usize,
    pub checkpoints: usize,
    /// Noise standard deviation per coordinate, as a fraction of the
    /// smallest Euclidean distance between two templates.
    pub noise_frac: f64,
    pub seed: u64,
}

fn normal(sigma: f64) -> Result<Option<Normal<f64>>> {
    if sigma > 0.0 {
        Ok(Some(Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?))
    } else {
        Ok(None)
    }
}

fn min_separation(templates: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..templates.len() {
        for b in a + 1..templates.len() {
            let d: f64 = templates[a]
                .iter()
                .zip(&templates[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Samples are labelled round-robin, sample `s` belonging to skill `s % k`.
pub fn template_trajectories(spec: &TemplateSpec) -> Result<TrajectoryMatrix> {
    if spec.k == 0 || spec.n < spec.k {
        return Err(Error::TooManyClusters { k: spec.k, n: spec.n });
    }
    let mut rng = rng::stream(spec.seed, &[0x5445_4d50]);
    let (r, c) = (spec.runs, spec.checkpoints);
    let templates: Vec<Vec<f64>> = (0..spec.k)
        .map(|_| {
            let start = rng.random_range(0.5..2.0);
            (0..r)
                .flat_map(|_| {
                    let rate = rng.random_range(0.2..4.0);
                    (0..c).map(move |t| start * f64::exp(-rate * (t + 1) as f64 / c as f64))
                })
                .collect()
        })
        .collect();
    let sigma = if spec.k > 1 {
        spec.noise_frac * min_separation(&templates)
    } else {
        spec.noise_frac
    };
    let noise = normal(sigma)?;
    let labels: Vec<usize> = (0..spec.n).map(|s| s % spec.k).collect();
    let features = labels
        .iter()
        .map(|&l| {
            templates[l]
                .iter()
                .map(|v| v + noise.map_or(0.0, |d| d.sample(&mut rng)))
                .collect()
        })
        .collect();
    TrajectoryMatrix::new(
        (0..spec.n).map(|s| format!("x{s}")).collect(),
        r,
        c,
        features,
        Some(labels),
    )
}

/// Per-sample losses from simulated runs: each run holds a random mixture,
/// checkpoint `c` is the latent loss of the sample's skill after `c + 1`
/// steps, and every sample carries a fixed offset plus observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrajectorySpec {
    pub dynamics: SimDynamics,
    pub n: usize,
    pub runs: usize,
    pub checkpoints: usize,
    pub offset_sigma: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

pub fn run_trajectories(spec: &RunTrajectorySpec) -> Result<TrajectoryMatrix> {
    let d = &spec.dynamics;
    d.validate()?;
    let k = d.m();
    if spec.n < k {
        return Err(Error::TooManyClusters { k, n: spec.n });
    }
    let mut rng = rng::stream(spec.seed, &[0x5255_4e53]);
    // latent[run][checkpoint][skill]
    let latent: Vec<Vec<Vec<f64>>> = (0..spec.runs)
        .map(|_| {
            let w: Vec<f64> = (0..d.k()).map(|_| rng.random_range(0.05..1.0)).collect();
            let p = crate::domain::normalize(&w)?;
            Ok((1..=spec.checkpoints).map(|t| d.closed_form(&p, t)).collect())
        })
        .collect::<Result<_>>()?;
    let offset = normal(spec.offset_sigma)?;
    let noise = normal(spec.noise_sigma)?;
    let labels: Vec<usize> = (0..spec.n).map(|s| s % k).collect();
    let features = labels
        .iter()
        .map(|&l| {
            let o = offset.map_or(0.0, |n| n.sample(&mut rng));
            let mut row = Vec::with_capacity(spec.runs * spec.checkpoints);
            for run in &latent {
                for ck in run {
                    row.push(ck[l] + o + noise.map_or(0.0, |n| n.sample(&mut rng)));
                }
            }
            row
        })
        .collect();
    TrajectoryMatrix::new(
        (0..spec.n).map(|s| format!("x{s}")).collect(),
        spec.runs,
        spec.checkpoints,
        features,
        Some(labels),
    )
}
