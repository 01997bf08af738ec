//! Experiment orchestration: sample apportionment, the selection loop,
//! multi-selector experiments, presets, and plot export.

mod experiment;
mod plots;
mod presets;

pub use experiment::{
    learn_graph, replay, run_experiment, DatasetSource, ExperimentOutcome, ExperimentSpec, GraphSource, InitialLosses,
    MatrixSource, RunOutcome, TrainerSpec,
};
pub use plots::{export_plots, PlotFiles};
pub use presets::{preset, preset_names, Preset, CURRICULUM_FRAC_PREVIOUS, ETA_SWEEP};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;

use crate::domain::{AllocationMode, LossState, Mixture, RoundRecord, RunConfig, RunLog, SkillId};
use crate::error::{Error, Result};
use crate::rng;
use crate::selector::{RoundContext, Selector};
use crate::trainer::{Batch, Trainer};

/// Per-skill training pool sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pools {
    pub sizes: Vec<usize>,
    /// Pools never run out; no sample indices are drawn.
    pub unlimited: bool,
}

impl Pools {
    pub fn new(sizes: Vec<usize>) -> Self {
        Pools {
            sizes,
            unlimited: false,
        }
    }

    pub fn unlimited(k: usize) -> Self {
        Pools {
            sizes: vec![usize::MAX; k],
            unlimited: true,
        }
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub counts: Vec<usize>,
    /// Indices into each skill's pool, distinct within the round.
    pub drawn: Vec<Vec<usize>>,
}

/// Largest-remainder apportionment of `total` in proportion to `weights`.
///
/// Ties in the fractional part go to the lower index. Weights must be
/// non-negative with a positive sum.
pub fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    debug_assert!(sum > 0.0);
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut it = order.iter().cycle();
    while assigned < total {
        let &i = it.next().expect("nonempty");
        if weights[i] > 0.0 {
            counts[i] += 1;
            assigned += 1;
        }
    }
    // floating-point quotas can only overshoot by rounding; trim the largest
    while assigned > total {
        let i = (0..counts.len()).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
        counts[i] -= 1;
        assigned -= 1;
    }
    counts
}

/// Turns a mixture into per-skill counts for one round and draws the
/// samples.
///
/// Skills whose pool cannot cover their count are capped and the shortfall
/// is re-apportioned over the skills that still have data, in proportion
/// to `p` (uniformly if those skills all have zero weight).
pub fn allocate_samples(
    p: &Mixture,
    budget: usize,
    pools: &Pools,
    mode: AllocationMode,
    seed: u64,
) -> Result<Allocation> {
    let k = p.len();
    if pools.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: pools.len(),
        });
    }
    let mut counts = match mode {
        AllocationMode::LargestRemainder => apportion(p.as_slice(), budget),
        AllocationMode::Multinomial => {
            let dist = WeightedIndex::new(p.as_slice()).map_err(|_| Error::DegenerateWeights)?;
            let mut r = rng::stream(seed, &[0x4d55_4c54]);
            let mut c = vec![0; k];
            for _ in 0..budget {
                c[dist.sample(&mut r)] += 1;
            }
            c
        }
    };

    let mut open: Vec<bool> = vec![true; k];
    loop {
        let mut shortfall = 0;
        for i in 0..k {
            if counts[i] >= pools.sizes[i] {
                shortfall += counts[i] - pools.sizes[i];
                counts[i] = pools.sizes[i];
                open[i] = false;
            }
        }
        if shortfall == 0 {
            break;
        }
        let mut w: Vec<f64> = (0..k).map(|i| if open[i] { p[i] } else { 0.0 }).collect();
        if w.iter().all(|x| *x == 0.0) {
            w = open.iter().map(|o| if *o { 1.0 } else { 0.0 }).collect();
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(Error::InsufficientData { remaining: shortfall });
        }
        for (c, extra) in counts.iter_mut().zip(apportion(&w, shortfall)) {
            *c += extra;
        }
    }

    let drawn = if pools.unlimited {
        vec![Vec::new(); k]
    } else {
        (0..k)
            .map(|i| {
                let mut r = rng::stream(seed, &[0x4452_4157, i as u64]);
                index::sample(&mut r, pools.sizes[i], counts[i]).into_vec()
            })
            .collect()
    };
    Ok(Allocation { counts, drawn })
}

const ALLOC_STREAM: u64 = 0x414c_4c4f;

/// Runs the selection loop, appending one record per round to `log`.
///
/// Round `t` observes the losses, trains on the round budget drawn from
/// `p_t`, and observes again. The losses observed at the start of round
/// `t` then produce `p_{t+1}`. On error the rounds completed so far stay
/// in `log`.
pub fn run_rounds_into(
    log: &mut RunLog,
    selector: &mut dyn Selector,
    trainer: &mut dyn Trainer,
    pools: &Pools,
    train: &[SkillId],
    eval: &[SkillId],
) -> Result<()> {
    let config = log.config.clone();
    config.validate()?;
    let k = train.len();
    trainer.reset()?;
    let mut before = observe(trainer, eval.len(), 1)?;
    let ctx = |round| RoundContext {
        round,
        budget: config.round_budget(round),
    };
    let mut p = selector.initial(&ctx(1))?;
    for t in 1..=config.rounds {
        if p.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: p.len(),
            });
        }
        let alloc = allocate_samples(
            &p,
            config.round_budget(t),
            pools,
            config.allocation,
            rng::derive_seed(config.seed, &[ALLOC_STREAM, t as u64]),
        )?;
        trainer.step(&Batch {
            round: t,
            counts: alloc.counts.clone(),
            mixture: p.clone(),
        })?;
        let after = observe(trainer, eval.len(), t + 1)?;
        log.push(RoundRecord::new(t, p.clone(), &alloc.counts, train, eval, &before, &after))?;
        if t < config.rounds {
            p = selector.update(&before, &ctx(t + 1))?;
        }
        before = after;
    }
    Ok(())
}

fn observe(trainer: &mut dyn Trainer, m: usize, round: usize) -> Result<LossState> {
    let mut s = trainer.observe()?;
    if s.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: s.len(),
        });
    }
    s.round = round;
    Ok(s)
}

pub fn run_rounds(
    config: &RunConfig,
    selector: &mut dyn Selector,
    trainer: &mut dyn Trainer,
    pools: &Pools,
    train: &[SkillId],
    eval: &[SkillId],
) -> Result<RunLog> {
    let mut log = RunLog::new(config.clone());
    run_rounds_into(&mut log, selector, trainer, pools, train, eval)?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{numbered_skills, SelectorKind, SkillItMode};
    use crate::selector::FixedSelector;
    use crate::trainer::SimDynamics;

    fn lr(p: &[f64], budget: usize, pools: &Pools) -> Result<Vec<usize>> {
        allocate_samples(
            &Mixture::new(p.to_vec()).unwrap(),
            budget,
            pools,
            AllocationMode::LargestRemainder,
            0,
        )
        .map(|a| a.counts)
    }

    #[test]
    fn apportionment_examples() {
        assert_eq!(lr(&[0.25; 4], 8, &Pools::unlimited(4)).unwrap(), vec![2, 2, 2, 2]);
        assert_eq!(lr(&[0.5, 0.3, 0.2], 10, &Pools::unlimited(3)).unwrap(), vec![5, 3, 2]);
        assert_eq!(lr(&[1.0, 0.0], 3, &Pools::new(vec![2, 10])).unwrap(), vec![2, 1]);
        // equal remainders break toward the lower index
        assert_eq!(lr(&[1.0 / 3.0; 3], 4, &Pools::unlimited(3)).unwrap(), vec![2, 1, 1]);
        assert_eq!(lr(&[0.5, 0.5], 0, &Pools::unlimited(2)).unwrap(), vec![0, 0]);
    }

    #[test]
    fn exhausted_pools() {
        let err = lr(&[0.5, 0.5], 5, &Pools::new(vec![2, 2])).unwrap_err();
        assert!(err.to_string().contains("insufficient data"));
        // shortfall follows p over the remaining skills
        assert_eq!(lr(&[0.6, 0.3, 0.1], 10, &Pools::new(vec![2, 100, 100])).unwrap(), vec![2, 6, 2]);
    }

    #[test]
    fn draws_are_distinct_and_seeded() {
        let p = Mixture::new(vec![0.7, 0.3]).unwrap();
        let pools = Pools::new(vec![10, 50]);
        let a = allocate_samples(&p, 10, &pools, AllocationMode::LargestRemainder, 9).unwrap();
        let b = allocate_samples(&p, 10, &pools, AllocationMode::LargestRemainder, 9).unwrap();
        assert_eq!(a, b);
        for (i, d) in a.drawn.iter().enumerate() {
            assert_eq!(d.len(), a.counts[i]);
            let mut s = d.clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), d.len());
            assert!(d.iter().all(|x| *x < pools.sizes[i]));
        }
    }

    #[test]
    fn multinomial_sums_to_budget() {
        let p = Mixture::new(vec![0.2, 0.0, 0.8]).unwrap();
        let a = allocate_samples(&p, 1000, &Pools::unlimited(3), AllocationMode::Multinomial, 3).unwrap();
        assert_eq!(a.counts.iter().sum::<usize>(), 1000);
        assert_eq!(a.counts[1], 0);
        assert!((a.counts[2] as f64 - 800.0).abs() < 60.0);
    }

    fn config(rounds: usize, window: usize) -> RunConfig {
        RunConfig {
            name: None,
            eta: 0.5,
            rounds,
            samples: rounds * 10,
            window,
            seed: 1,
            selector: SelectorKind::SkillIt {
                mode: SkillItMode::Full,
            },
            allocation: AllocationMode::LargestRemainder,
        }
    }

    #[test]
    fn loop_records_each_round() {
        let skills = numbered_skills("s", 2);
        let d = SimDynamics::new(vec![vec![0.5, 0.0], vec![0.0, 0.5]], vec![1.0, 2.0], 0.0, 0).unwrap();
        let mut sel = FixedSelector::new(Mixture::new(vec![0.5, 0.5]).unwrap());
        let log = crate::trainer::run_simulation(&config(3, 1), &mut sel, &d, &skills, &skills).unwrap();
        assert_eq!(log.rounds.len(), 3);
        assert_eq!(log.rounds[0].before(), vec![1.0, 2.0]);
        assert_eq!(log.rounds[0].after(), vec![0.75, 1.5]);
        assert_eq!(log.rounds[1].before(), log.rounds[0].after());
        assert_eq!(log.rounds[2].counts(), vec![5, 5]);
    }

    struct Recorder {
        seen: Vec<Vec<f64>>,
    }

    impl Selector for Recorder {
        fn initial(&mut self, _ctx: &RoundContext) -> Result<Mixture> {
            Ok(Mixture::new(vec![1.0, 0.0]).unwrap())
        }
        fn update(&mut self, observed: &LossState, _ctx: &RoundContext) -> Result<Mixture> {
            self.seen.push(observed.losses.clone());
            Ok(Mixture::new(vec![1.0, 0.0]).unwrap())
        }
        fn state_json(&self) -> Result<serde_json::Value> {
            Ok(serde_json::Value::Null)
        }
    }

    #[test]
    fn update_sees_start_of_round_losses() {
        let skills = numbered_skills("s", 2);
        let d = SimDynamics::new(vec![vec![0.5, 0.0], vec![0.0, 0.5]], vec![1.0, 1.0], 0.0, 0).unwrap();
        let mut sel = Recorder { seen: Vec::new() };
        let log = crate::trainer::run_simulation(&config(3, 1), &mut sel, &d, &skills, &skills).unwrap();
        assert_eq!(sel.seen.len(), 2);
        assert_eq!(sel.seen[0], log.rounds[0].before());
        assert_eq!(sel.seen[1], log.rounds[1].before());
    }
}
