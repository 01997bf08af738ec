//! Mixture selectors: online mirror descent over the skills graph and the
//! baselines it is compared against.

mod curriculum;
mod proximal;
mod skillit;
mod stratified;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use curriculum::{curriculum_allocate, CurriculumChoice, CurriculumState};
pub use proximal::proximal_oracle;
pub use skillit::{graph_scores, skillit_init, skillit_update, SkillItState};
pub use stratified::{prerequisites, skill_stratified, stratified};

use crate::domain::{
    normalize, LossState, Mixture, RunConfig, Setting, SelectorKind, SkillItMode, SkillsGraph,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundContext {
    /// 1-based round the mixture is for.
    pub round: usize,
    /// Samples that round will train on.
    pub budget: usize,
}

/// A selector proposes the mixture for each round.
///
/// `initial` gives the first round's mixture. After round `t` trains,
/// `update` receives the losses observed at the start of round `t` and
/// returns the mixture for round `t + 1`.
pub trait Selector: Send {
    fn initial(&mut self, ctx: &RoundContext) -> Result<Mixture>;

    fn update(&mut self, observed: &LossState, ctx: &RoundContext) -> Result<Mixture>;

    /// Serializable snapshot of the selector's state.
    fn state_json(&self) -> Result<serde_json::Value>;
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

pub struct SkillItSelector {
    state: SkillItState,
    frozen: bool,
}

impl SkillItSelector {
    pub fn new(graph: SkillsGraph, eta: f64, window: usize, mode: SkillItMode) -> Result<Self> {
        let graph = match mode {
            SkillItMode::NoGraph => name_identity(&graph)?,
            _ => graph,
        };
        Ok(SkillItSelector {
            state: SkillItState::new(graph, eta, window)?,
            frozen: mode == SkillItMode::Static,
        })
    }

    pub fn state(&self) -> &SkillItState {
        &self.state
    }
}

/// 1 where a training skill and an evaluation skill share a name, else 0.
pub fn name_identity(graph: &SkillsGraph) -> Result<SkillsGraph> {
    let mut m = vec![vec![0.0; graph.m()]; graph.k()];
    for (j, i) in graph.eval_in_train().into_iter().enumerate() {
        if let Some(i) = i {
            m[i][j] = 1.0;
        }
    }
    graph.with_weights(m)
}

impl Selector for SkillItSelector {
    fn initial(&mut self, _ctx: &RoundContext) -> Result<Mixture> {
        self.state.initial()
    }

    fn update(&mut self, observed: &LossState, _ctx: &RoundContext) -> Result<Mixture> {
        let p = skillit_update(&mut self.state, observed)?;
        if self.frozen {
            self.state.initial()
        } else {
            Ok(p)
        }
    }

    fn state_json(&self) -> Result<serde_json::Value> {
        to_json(&self.state)
    }
}

/// Returns the same mixture every round.
pub struct FixedSelector {
    mixture: Mixture,
}

impl FixedSelector {
    pub fn new(mixture: Mixture) -> Self {
        FixedSelector { mixture }
    }
}

impl Selector for FixedSelector {
    fn initial(&mut self, _ctx: &RoundContext) -> Result<Mixture> {
        Ok(self.mixture.clone())
    }

    fn update(&mut self, _observed: &LossState, _ctx: &RoundContext) -> Result<Mixture> {
        Ok(self.mixture.clone())
    }

    fn state_json(&self) -> Result<serde_json::Value> {
        to_json(&self.mixture)
    }
}

/// Draws each round's budget uniformly from the union of the training
/// pools and reports the realized proportions.
pub struct RandomSelector {
    sizes: Vec<usize>,
    with_replacement: bool,
    rng: ChaCha8Rng,
    seed: u64,
}

impl RandomSelector {
    pub fn new(sizes: Vec<usize>, with_replacement: bool, seed: u64) -> Result<Self> {
        if sizes.iter().all(|s| *s == 0) {
            return Err(Error::InsufficientData { remaining: 0 });
        }
        Ok(RandomSelector {
            sizes,
            with_replacement,
            rng: rng::stream(seed, &[0x5241_4e44]),
            seed,
        })
    }

    fn draw(&mut self, budget: usize) -> Result<Mixture> {
        let mut remaining = self.sizes.clone();
        let mut counts = vec![0usize; remaining.len()];
        for n in 0..budget {
            let total: usize = remaining.iter().sum();
            if total == 0 {
                return Err(Error::InsufficientData { remaining: budget - n });
            }
            let mut r = self.rng.random_range(0..total);
            let mut pick = 0;
            for (i, c) in remaining.iter().enumerate() {
                if r < *c {
                    pick = i;
                    break;
                }
                r -= c;
            }
            counts[pick] += 1;
            if !self.with_replacement {
                remaining[pick] -= 1;
            }
        }
        let w: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
        normalize(&w)
    }
}

impl Selector for RandomSelector {
    fn initial(&mut self, ctx: &RoundContext) -> Result<Mixture> {
        self.draw(ctx.budget.max(1))
    }

    fn update(&mut self, _observed: &LossState, ctx: &RoundContext) -> Result<Mixture> {
        self.draw(ctx.budget.max(1))
    }

    fn state_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::json!({ "sizes": self.sizes, "seed": self.seed }))
    }
}

/// Curriculum paced over rounds: round `t` is step `t - 1` of `T`.
pub struct CurriculumSelector {
    state: CurriculumState,
}

impl CurriculumSelector {
    pub fn new(state: CurriculumState) -> Self {
        CurriculumSelector { state }
    }
}

impl Selector for CurriculumSelector {
    fn initial(&mut self, ctx: &RoundContext) -> Result<Mixture> {
        Ok(curriculum_allocate(&self.state, ctx.round - 1).mixture)
    }

    fn update(&mut self, _observed: &LossState, ctx: &RoundContext) -> Result<Mixture> {
        Ok(curriculum_allocate(&self.state, ctx.round - 1).mixture)
    }

    fn state_json(&self) -> Result<serde_json::Value> {
        to_json(&self.state)
    }
}

/// What a selector may need to know about its run.
pub struct SelectorEnv<'a> {
    pub graph: &'a SkillsGraph,
    pub pool_sizes: &'a [usize],
    pub pools_unlimited: bool,
    /// Losses of the base model, used as curriculum scores.
    pub initial_losses: &'a LossState,
}

pub fn build_selector(config: &RunConfig, env: &SelectorEnv) -> Result<Box<dyn Selector>> {
    config.validate()?;
    let k = env.graph.k();
    Ok(match &config.selector {
        SelectorKind::Random => Box::new(RandomSelector::new(
            env.pool_sizes.to_vec(),
            env.pools_unlimited,
            rng::derive_seed(config.seed, &[0x0053_454c]),
        )?),
        SelectorKind::Stratified => Box::new(FixedSelector::new(stratified(k))),
        SelectorKind::SkillStratified => Box::new(FixedSelector::new(skill_stratified(env.graph)?)),
        SelectorKind::Curriculum {
            direction,
            epochs,
            frac_previous,
        } => {
            if env.graph.setting() != Setting::Continual {
                return Err(Error::InvalidConfig(
                    "curriculum baselines score training skills by their own loss and need the continual setting"
                        .into(),
                ));
            }
            let state = CurriculumState::new(
                env.initial_losses.losses.clone(),
                *epochs,
                config.rounds,
                *direction,
                *frac_previous,
            )?;
            Box::new(CurriculumSelector::new(state))
        }
        SelectorKind::SkillIt { mode } => Box::new(SkillItSelector::new(
            env.graph.clone(),
            config.eta,
            config.window,
            *mode,
        )?),
        SelectorKind::Fixed { mixture } => {
            if mixture.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: mixture.len(),
                });
            }
            Box::new(FixedSelector::new(mixture.clone()))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{numbered_skills, SkillId};

    fn ctx(round: usize) -> RoundContext {
        RoundContext { round, budget: 100 }
    }

    #[test]
    fn no_graph_uses_identity() {
        let g = SkillsGraph::all_ones(numbered_skills("s", 3));
        let mut s = SkillItSelector::new(g, 0.5, 3, SkillItMode::NoGraph).unwrap();
        assert_eq!(s.initial(&ctx(1)).unwrap(), Mixture::uniform(3));
        let p = s.update(&LossState::new(vec![1.0, 0.0, 0.0], 1).unwrap(), &ctx(2)).unwrap();
        assert_eq!(p.argmax(), 0);
        assert_eq!(p[1], p[2]);
    }

    #[test]
    fn static_mode_keeps_init() {
        let s3 = numbered_skills("s", 3);
        let g = SkillsGraph::continual(s3, vec![vec![1.0, 0.5, 0.5], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
        let init = skillit_init(&g, 0.5).unwrap();
        let mut s = SkillItSelector::new(g, 0.5, 3, SkillItMode::Static).unwrap();
        assert_eq!(s.initial(&ctx(1)).unwrap(), init);
        for t in 2..5 {
            let p = s.update(&LossState::new(vec![0.1, 2.0, 3.0], t).unwrap(), &ctx(t)).unwrap();
            assert_eq!(p, init);
        }
    }

    #[test]
    fn name_identity_for_fine_tune() {
        let train = numbered_skills("s", 3);
        let eval = vec![SkillId::new(0, "s2").unwrap()];
        let g = SkillsGraph::new(train, eval, vec![vec![0.5], vec![1.0], vec![0.5]], Setting::FineTune)
            .unwrap();
        let id = name_identity(&g).unwrap();
        assert_eq!(id.column(0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn random_follows_pool_sizes() {
        let mut r = RandomSelector::new(vec![100, 0, 300], false, 1).unwrap();
        let p = r.initial(&ctx(1)).unwrap();
        assert_eq!(p[1], 0.0);
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // 100 draws without replacement from 400 items
        assert!((p[2] * 100.0).round() as usize <= 100);
        let mut short = RandomSelector::new(vec![1, 1], false, 1).unwrap();
        assert!(short.draw(3).is_err());
    }

    #[test]
    fn random_is_seeded() {
        let mut a = RandomSelector::new(vec![5, 5, 5], true, 4).unwrap();
        let mut b = RandomSelector::new(vec![5, 5, 5], true, 4).unwrap();
        for t in 1..5 {
            assert_eq!(a.initial(&ctx(t)).unwrap(), b.initial(&ctx(t)).unwrap());
        }
    }
}
