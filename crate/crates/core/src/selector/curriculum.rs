//! Skill-level curriculum and anticurriculum with a linear pacing function.
//!
//! Skills are ranked by a per-skill score. In epoch `e = floor(step * M / H)`
//! the first `ceil((e + 1) * k / M)` ranked skills are eligible. When
//! `frac_previous > 0`, that fraction of the mass is spread over skills
//! introduced in earlier epochs and the rest over the newly introduced ones.

use serde::{Deserialize, Serialize};

use crate::domain::{CurriculumDirection, Mixture};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub scores: Vec<f64>,
    pub epochs: usize,
    pub total_steps: usize,
    pub direction: CurriculumDirection,
    pub frac_previous: f64,
}

impl CurriculumState {
    pub fn new(
        scores: Vec<f64>,
        epochs: usize,
        total_steps: usize,
        direction: CurriculumDirection,
        frac_previous: f64,
    ) -> Result<Self> {
        if scores.is_empty() || scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("curriculum scores must be finite and nonempty".into()));
        }
        if epochs == 0 || total_steps == 0 {
            return Err(Error::InvalidConfig("curriculum needs epochs >= 1 and steps >= 1".into()));
        }
        if !(0.0..=1.0).contains(&frac_previous) {
            return Err(Error::InvalidConfig("frac_previous must be in [0, 1]".into()));
        }
        Ok(CurriculumState {
            scores,
            epochs,
            total_steps,
            direction,
            frac_previous,
        })
    }

    /// Skill indices from first-introduced to last; ties keep index order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            let ord = self.scores[a].total_cmp(&self.scores[b]);
            match self.direction {
                CurriculumDirection::Curriculum => ord,
                CurriculumDirection::Anticurriculum => ord.reverse(),
            }
        });
        order
    }

    pub fn epoch(&self, step: usize) -> usize {
        (step * self.epochs / self.total_steps).min(self.epochs - 1)
    }

    fn eligible_count(&self, epoch: usize) -> usize {
        let k = self.scores.len();
        ((epoch + 1) * k).div_ceil(self.epochs).min(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumChoice {
    /// Eligible skill indices in rank order.
    pub eligible: Vec<usize>,
    pub mixture: Mixture,
}

pub fn curriculum_allocate(state: &CurriculumState, step: usize) -> CurriculumChoice {
    let k = state.scores.len();
    let order = state.ranking();
    let epoch = state.epoch(step);
    let now = state.eligible_count(epoch);
    let before = if epoch == 0 { 0 } else { state.eligible_count(epoch - 1) };
    let eligible = order[..now].to_vec();

    let mut w = vec![0.0; k];
    if state.frac_previous > 0.0 && before > 0 && now > before {
        let prev_mass = state.frac_previous / before as f64;
        let new_mass = (1.0 - state.frac_previous) / (now - before) as f64;
        for &i in &order[..before] {
            w[i] = prev_mass;
        }
        for &i in &order[before..now] {
            w[i] = new_mass;
        }
    } else {
        for &i in &eligible {
            w[i] = 1.0 / now as f64;
        }
    }
    let mixture = crate::domain::normalize(&w).expect("at least one eligible skill");
    CurriculumChoice { eligible, mixture }
}
