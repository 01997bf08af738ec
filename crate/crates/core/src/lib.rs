//! Skill-graph-aware data mixture selection.
//!
//! The crate learns a weighted skills graph from loss observations, picks
//! per-round sampling mixtures (online mirror descent over the graph and a
//! family of baselines), generates synthetic skill datasets, and simulates
//! loss dynamics so whole experiments can be checked without a model.

pub mod domain;
pub mod error;
pub mod graphlearn;
pub mod harness;
pub mod recover;
pub mod rng;
pub mod selector;
pub mod synthgen;
pub mod trainer;

pub use domain::*;
pub use error::{Error, Result};
