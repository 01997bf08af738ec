use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Batch, Snapshot, Trainer};
use crate::domain::{normalize, LossState, Mixture, RunConfig, RunLog, SkillId};
use crate::error::{Error, Result};
use crate::harness::{run_rounds, Pools};
use crate::rng;
use crate::selector::Selector;

const NOISE_STREAM: u64 = 0x4e4f_4953;

/// Slack on the `A^T p <= 1` check for floating-point accumulation.
const OVERSHOOT_TOL: f64 = 1e-12;

/// One application of the loss dynamics: `L'_j = L_j (1 - A[:, j]^T p)`.
///
/// `a` is k x m (rows are training skills). A column whose dot product
/// with `p` exceeds 1 is rejected; a loss that reaches 0 stays at 0.
pub fn sim_step(state: &LossState, p: &Mixture, a: &[Vec<f64>]) -> Result<LossState> {
    Ok(LossState {
        losses: apply(&state.losses, p.as_slice(), a, 1.0)?,
        round: state.round + 1,
    })
}

fn apply(losses: &[f64], p: &[f64], a: &[Vec<f64>], scale: f64) -> Result<Vec<f64>> {
    if a.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: p.len(),
        });
    }
    losses
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let rate: f64 = scale * a.iter().zip(p).map(|(row, pi)| row[j] * pi).sum::<f64>();
            if rate > 1.0 + OVERSHOOT_TOL {
                return Err(Error::DynamicsOvershoot {
                    column: j,
                    value: rate,
                });
            }
            Ok(l * (1.0 - rate).max(0.0))
        })
        .collect()
}

/// Ground truth for the simulated trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDynamics {
    /// k x m matrix with entries in [0, 1].
    pub a_true: Vec<Vec<f64>>,
    /// Initial losses over the m evaluation skills.
    pub l0: Vec<f64>,
    /// Std-dev of the log-normal multiplicative observation noise.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Multiplies `A` on every step; probes use small values to mimic many
    /// small optimizer steps.
    #[serde(default = "one")]
    pub step_scale: f64,
    /// Drive the dynamics with the realized counts instead of the target mixture.
    #[serde(default)]
    pub use_realized_counts: bool,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl SimDynamics {
    pub fn new(a_true: Vec<Vec<f64>>, l0: Vec<f64>, noise_sigma: f64, seed: u64) -> Result<Self> {
        let d = SimDynamics {
            a_true,
            l0,
            noise_sigma,
            step_scale: 1.0,
            use_realized_counts: false,
            seed,
        };
        d.validate()?;
        Ok(d)
    }

    /// Divides an arbitrary nonnegative matrix by its largest entry.
    pub fn rescaled(raw: Vec<Vec<f64>>, l0: Vec<f64>, noise_sigma: f64, seed: u64) -> Result<Self> {
        let max = raw.iter().flatten().copied().fold(0.0f64, f64::max);
        let a = if max > 0.0 {
            raw.into_iter()
                .map(|r| r.into_iter().map(|v| v.max(0.0) / max).collect())
                .collect()
        } else {
            raw
        };
        SimDynamics::new(a, l0, noise_sigma, seed)
    }

    pub fn with_step_scale(mut self, s: f64) -> Result<Self> {
        self.step_scale = s;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.a_true.len();
        let m = self.l0.len();
        if k == 0 || m == 0 {
            return Err(Error::InvalidConfig("dynamics need k, m >= 1".into()));
        }
        for row in &self.a_true {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidConfig("A_true entries must lie in [0, 1]".into()));
            }
        }
        if self.l0.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::InvalidConfig("initial losses must be finite and positive".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        if !(self.step_scale > 0.0 && self.step_scale <= 1.0) {
            return Err(Error::InvalidConfig("step_scale must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.a_true.len()
    }

    pub fn m(&self) -> usize {
        self.l0.len()
    }

    /// `L0_j * prod_t (1 - A[:, j]^T p)` for a mixture held for `rounds` rounds.
    pub fn closed_form(&self, p: &Mixture, rounds: usize) -> Vec<f64> {
        (0..self.m())
            .map(|j| {
                let rate: f64 = self
                    .a_true
                    .iter()
                    .zip(p.as_slice())
                    .map(|(r, pi)| r[j] * pi)
                    .sum::<f64>()
                    * self.step_scale;
                self.l0[j] * (1.0 - rate).max(0.0).powi(rounds as i32)
            })
            .collect()
    }

    pub fn trainer(&self) -> Result<SimTrainer> {
        SimTrainer::new(self.clone())
    }
}

#[derive(Clone)]
struct SimState {
    latent: Vec<f64>,
    observed: Vec<f64>,
    rng: ChaCha8Rng,
    steps: usize,
}

/// Simulated trainer driven by [`SimDynamics`].
pub struct SimTrainer {
    dynamics: SimDynamics,
    noise: Option<Normal<f64>>,
    state: SimState,
}

impl SimTrainer {
    pub fn new(dynamics: SimDynamics) -> Result<Self> {
        dynamics.validate()?;
        let noise = if dynamics.noise_sigma > 0.0 {
            Some(Normal::new(0.0, dynamics.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?)
        } else {
            None
        };
        let state = SimTrainer::initial_state(&dynamics);
        Ok(SimTrainer {
            dynamics,
            noise,
            state,
        })
    }

    fn initial_state(d: &SimDynamics) -> SimState {
        SimState {
            latent: d.l0.clone(),
            observed: d.l0.clone(),
            rng: rng::stream(d.seed, &[NOISE_STREAM]),
            steps: 0,
        }
    }

    pub fn dynamics(&self) -> &SimDynamics {
        &self.dynamics
    }

    /// Noiseless losses.
    pub fn latent(&self) -> &[f64] {
        &self.state.latent
    }

    pub fn steps(&self) -> usize {
        self.state.steps
    }
}

impl Trainer for SimTrainer {
    fn reset(&mut self) -> Result<()> {
        self.state = SimTrainer::initial_state(&self.dynamics);
        Ok(())
    }

    fn step(&mut self, batch: &Batch) -> Result<()> {
        let k = self.dynamics.k();
        if batch.counts.len() != k || batch.mixture.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: batch.counts.len(),
            });
        }
        let realized;
        let p = if self.dynamics.use_realized_counts {
            let w: Vec<f64> = batch.counts.iter().map(|c| *c as f64).collect();
            realized = normalize(&w)?;
            &realized
        } else {
            &batch.mixture
        };
        let next = apply(
            &self.state.latent,
            p.as_slice(),
            &self.dynamics.a_true,
            self.dynamics.step_scale,
        )?;
        let observed = match &self.noise {
            None => next.clone(),
            Some(n) => {
                let rng = &mut self.state.rng;
                next.iter().map(|l| l * n.sample(rng).exp()).collect()
            }
        };
        self.state.latent = next;
        self.state.observed = observed;
        self.state.steps += 1;
        Ok(())
    }

    fn observe(&mut self) -> Result<LossState> {
        LossState::new(self.state.observed.clone(), self.state.steps)
    }

    fn snapshot(&self) -> Result<Snapshot> {
        Ok(Snapshot::new(self.state.clone()))
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        let s = snapshot
            .downcast_ref::<SimState>()
            .ok_or_else(|| Error::Trainer("snapshot does not belong to a simulated trainer".into()))?;
        self.state = s.clone();
        Ok(())
    }
}

/// Runs a selector against a fresh simulated trainer with unlimited pools.
pub fn run_simulation(
    config: &RunConfig,
    selector: &mut dyn Selector,
    dynamics: &SimDynamics,
    train: &[SkillId],
    eval: &[SkillId],
) -> Result<RunLog> {
    let mut trainer = dynamics.trainer()?;
    run_rounds(config, selector, &mut trainer, &Pools::unlimited(train.len()), train, eval)
}

/// Random continual-setting ground truth with prerequisite-style edges.
///
/// Off-diagonal edges appear with probability `edge_prob` (only from lower
/// to higher index when `forward_only`), with weights drawn from
/// `edge_weight`; diagonal entries come from `diag`. Each column is then
/// divided by its maximum so every column max is exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedGraph {
    pub k: usize,
    pub edge_prob: f64,
    pub edge_weight: (f64, f64),
    pub diag: (f64, f64),
    #[serde(default)]
    pub forward_only: bool,
    pub seed: u64,
}

impl PlantedGraph {
    /// Off-diagonal edges of weight 0.5, unit diagonal.
    pub fn binary(k: usize, edge_prob: f64, seed: u64) -> Self {
        PlantedGraph {
            k,
            edge_prob,
            edge_weight: (0.5, 0.5),
            diag: (1.0, 1.0),
            forward_only: false,
            seed,
        }
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let mut rng = rng::stream(self.seed, &[0x504c_414e]);
        let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        let k = self.k;
        let mut a = vec![vec![0.0; k]; k];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                if i == j {
                    *cell = draw(&mut rng, self.diag);
                } else if (!self.forward_only || i < j) && rng.random_bool(self.edge_prob) {
                    *cell = draw(&mut rng, self.edge_weight);
                }
            }
        }
        for j in 0..k {
            let max = a.iter().map(|r| r[j]).fold(0.0f64, f64::max);
            if max > 0.0 {
                for row in a.iter_mut() {
                    row[j] /= max;
                }
            }
        }
        a
    }

    pub fn dynamics(&self, l0: Vec<f64>, noise_sigma: f64, seed: u64) -> Result<SimDynamics> {
        SimDynamics::new(self.matrix(), l0, noise_sigma, seed)
    }
}
