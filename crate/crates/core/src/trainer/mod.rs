//! The trainer contract and its implementations.
//!
//! A trainer consumes per-skill sample allocations and reports validation
//! losses over the evaluation skills. [`SimTrainer`] evolves losses with
//! the multiplicative dynamics `L_j <- L_j (1 - A[:, j]^T p)`;
//! [`ExternalTrainer`] forwards allocations to a separate process.

mod external;
mod sim;

use std::any::Any;

pub use external::{AdapterRequest, AdapterResponse, ExternalTrainer};
pub use sim::{run_simulation, sim_step, PlantedGraph, SimDynamics, SimTrainer};

use crate::domain::{LossState, Mixture};
use crate::error::Result;

/// One training step's worth of data.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub round: usize,
    /// Samples per training skill.
    pub counts: Vec<usize>,
    /// The mixture the counts were apportioned from.
    pub mixture: Mixture,
}

impl Batch {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Opaque saved trainer state.
pub struct Snapshot(Box<dyn Any + Send>);

impl Snapshot {
    pub fn new<T: Any + Send>(state: T) -> Self {
        Snapshot(Box::new(state))
    }

    pub fn downcast_ref<T: Any>(&self) -> Option<&T> {
        self.0.downcast_ref()
    }
}

pub trait Trainer: Send {
    /// Back to the base model; `observe` then returns the initial losses.
    fn reset(&mut self) -> Result<()>;

    /// The only state mutator.
    fn step(&mut self, batch: &Batch) -> Result<()>;

    /// Losses over the evaluation skills at the current state.
    fn observe(&mut self) -> Result<LossState>;

    fn snapshot(&self) -> Result<Snapshot>;

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()>;
}

impl<T: Trainer + ?Sized> Trainer for Box<T> {
    fn reset(&mut self) -> Result<()> {
        (**self).reset()
    }

    fn step(&mut self, batch: &Batch) -> Result<()> {
        (**self).step(batch)
    }

    fn observe(&mut self) -> Result<LossState> {
        (**self).observe()
    }

    fn snapshot(&self) -> Result<Snapshot> {
        (**self).snapshot()
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        (**self).restore(snapshot)
    }
}
