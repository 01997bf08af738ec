use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrajectoryMatrix;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Standardize feature columns before clustering.
    pub zscore: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 10,
            max_iters: 300,
            zscore: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignment: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Restart that produced this fit.
    pub restart: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = dist2(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, di) in d.iter().enumerate() {
                if r < *di {
                    pick = i;
                    break;
                }
                r -= di;
            }
            pick
        } else {
            // all remaining points coincide with a center
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (di, p) in d.iter_mut().zip(points) {
            *di = di.min(dist2(p, centers.last().unwrap()));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iters: usize) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let k = centers.len();
    let dim = points[0].len();
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (c, _) = nearest(p, &centers);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (a, p) in assignment.iter().zip(points) {
            sizes[*a] += 1;
            for (s, x) in sums[*a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            } else {
                // re-seed an empty cluster at the point farthest from its center
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        dist2(&points[i], &centers[assignment[i]])
                            .total_cmp(&dist2(&points[j], &centers[assignment[j]]))
                            .then(j.cmp(&i))
                    })
                    .unwrap();
                centers[c] = points[far].clone();
                assignment[far] = c;
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&assignment)
        .map(|(p, a)| dist2(p, &centers[*a]))
        .sum();
    (assignment, centers, inertia)
}

/// k-means with k-means++ seeding; keeps the lowest-inertia restart, ties
/// going to the earlier restart.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, cfg: &KMeansConfig) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::TooManyClusters { k, n: points.len() });
    }
    let restarts = cfg.restarts.max(1);
    let fits: Vec<KMeansFit> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, &[r as u64]);
            let init = plus_plus(points, k, &mut rng);
            let (assignment, centers, inertia) = lloyd(points, init, cfg.max_iters);
            KMeansFit {
                assignment,
                centers,
                inertia,
                restart: r,
            }
        })
        .collect();
    Ok(fits
        .into_iter()
        .min_by(|a, b| a.inertia.total_cmp(&b.inertia).then(a.restart.cmp(&b.restart)))
        .expect("at least one restart"))
}

pub fn cluster_trajectories(traj: &TrajectoryMatrix, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<Vec<usize>> {
    let fit = if cfg.zscore {
        kmeans(&traj.zscored().features, k, seed, cfg)?
    } else {
        kmeans(&traj.features, k, seed, cfg)?
    };
    Ok(fit.assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recover::matched_accuracy;

    fn duplicated() -> (Vec<Vec<f64>>, Vec<usize>) {
        let protos = [vec![0.0, 0.0], vec![5.0, 1.0], vec![-3.0, 4.0], vec![2.0, -6.0]];
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..25 {
            for (l, p) in protos.iter().enumerate() {
                pts.push(p.clone());
                labels.push(l);
            }
        }
        (pts, labels)
    }

    #[test]
    fn duplicated_points_split_perfectly() {
        let (pts, labels) = duplicated();
        let fit = kmeans(&pts, 4, 1, &KMeansConfig::default()).unwrap();
        assert_eq!(fit.inertia, 0.0);
        assert_eq!(matched_accuracy(&fit.assignment, &labels).unwrap(), 1.0);
    }

    #[test]
    fn single_cluster() {
        let (pts, _) = duplicated();
        let fit = kmeans(&pts, 1, 1, &KMeansConfig::default()).unwrap();
        assert!(fit.assignment.iter().all(|a| *a == 0));
    }

    #[test]
    fn too_many_clusters() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            kmeans(&pts, 3, 0, &KMeansConfig::default()),
            Err(Error::TooManyClusters { k: 3, n: 2 })
        ));
    }

    #[test]
    fn deterministic_and_scale_covariant() {
        let mut rng = rng::stream(5, &[]);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let c = (i % 3) as f64 * 4.0;
                vec![c + rng.random::<f64>(), c - rng.random::<f64>()]
            })
            .collect();
        let cfg = KMeansConfig::default();
        let a = kmeans(&pts, 3, 9, &cfg).unwrap();
        let b = kmeans(&pts, 3, 9, &cfg).unwrap();
        assert_eq!(a, b);
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|x| x * 4.0).collect()).collect();
        assert_eq!(kmeans(&scaled, 3, 9, &cfg).unwrap().assignment, a.assignment);
    }
}
