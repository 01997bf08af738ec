//! Online mirror descent over the skills graph.
//!
//! Weights live in log space. The first mixture is the softmax of
//! `eta * rowsum(A)`. After each observation the mixture is recomputed from
//! that initialization plus the last `w` observed loss vectors:
//!
//! ```text
//! log u_i = eta * sum_j A_ij  +  eta * sum_{tau in window} sum_j A_ij L_j(tau)
//! ```
//!
//! This is the exponentiated-gradient step for minimizing average loss
//! under `L_j <- L_j (1 - A[:, j]^T p)`, whose gradient in `p_i` is
//! `-sum_j A_ij L_j`. The minus sign cancels against the descent step, so
//! the exponent is positive: skills that feed high-loss skills gain mass.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::domain::{LossState, Mixture, SkillsGraph};
use crate::error::{Error, Result};

/// `normalize(exp(eta * rowsum_i(A)))`, diagonal included.
pub fn skillit_init(graph: &SkillsGraph, eta: f64) -> Result<Mixture> {
    let log_w: Vec<f64> = graph.row_sums().iter().map(|s| eta * s).collect();
    Mixture::from_log_weights(&log_w)
}

/// `sum_j A_ij L_j` for each training skill i.
pub fn graph_scores(graph: &SkillsGraph, losses: &[f64]) -> Vec<f64> {
    graph
        .rows()
        .iter()
        .map(|row| row.iter().zip(losses).map(|(a, l)| a * l).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillItState {
    graph: SkillsGraph,
    eta: f64,
    window: usize,
    history: VecDeque<LossState>,
    round: usize,
}

impl SkillItState {
    pub fn new(graph: SkillsGraph, eta: f64, window: usize) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::InvalidConfig(format!("eta must be finite and >= 0, got {eta}")));
        }
        if window == 0 {
            return Err(Error::InvalidConfig("window must be >= 1".into()));
        }
        Ok(SkillItState {
            graph,
            eta,
            window,
            history: VecDeque::with_capacity(window),
            round: 0,
        })
    }

    pub fn graph(&self) -> &SkillsGraph {
        &self.graph
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn history(&self) -> impl Iterator<Item = &LossState> {
        self.history.iter()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn initial(&self) -> Result<Mixture> {
        skillit_init(&self.graph, self.eta)
    }

    /// Unnormalized log weights from the initialization and the current window.
    pub fn log_weights(&self) -> Result<Vec<f64>> {
        if self.history.is_empty() {
            return Err(Error::EmptyHistory);
        }
        let mut acc = vec![0.0; self.graph.k()];
        for obs in &self.history {
            for (a, s) in acc.iter_mut().zip(graph_scores(&self.graph, &obs.losses)) {
                *a += s;
            }
        }
        Ok(self
            .graph
            .row_sums()
            .iter()
            .zip(&acc)
            .map(|(r, a)| self.eta * r + self.eta * a)
            .collect())
    }

    pub fn mixture(&self) -> Result<Mixture> {
        Mixture::from_log_weights(&self.log_weights()?)
    }

    fn push(&mut self, observed: &LossState) -> Result<()> {
        if observed.len() != self.graph.m() {
            return Err(Error::DimensionMismatch {
                expected: self.graph.m(),
                got: observed.len(),
            });
        }
        let checked = LossState::new(observed.losses.clone(), observed.round)?;
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(checked);
        self.round += 1;
        Ok(())
    }
}

/// Pushes `observed` into the window and returns the next mixture.
pub fn skillit_update(state: &mut SkillItState, observed: &LossState) -> Result<Mixture> {
    state.push(observed)?;
    state.mixture()
}
