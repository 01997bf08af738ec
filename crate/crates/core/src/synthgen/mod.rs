//! Synthetic skill datasets with per-sample skill labels.

pub mod addition;
pub mod lego;

use rand::seq::SliceRandom;

pub use addition::{gen_addition, AdditionSpec};
pub use lego::{gen_lego, LegoSpec, Structure};

use crate::domain::Sample;
use crate::rng;

const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// Shuffles generated samples into a single seeded order.
pub fn shuffled(mut samples: Vec<Sample>, seed: u64) -> Vec<Sample> {
    samples.shuffle(&mut rng::stream(seed, &[SHUFFLE_STREAM]));
    samples
}
