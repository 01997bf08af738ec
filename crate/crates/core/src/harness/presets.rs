use serde::Serialize;

use crate::domain::{AllocationMode, RunConfig, SelectorKind};
use crate::error::{Error, Result};

/// Named hyperparameter set for a selection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub eta: f64,
    pub rounds: usize,
    pub window: usize,
    /// Training steps the schedule was tuned for.
    pub train_steps: usize,
    /// Curriculum groups for the curriculum baselines.
    pub curriculum_epochs: usize,
}

pub const CURRICULUM_FRAC_PREVIOUS: f64 = 0.4;

const PRESETS: &[Preset] = &[
    Preset { name: "lego-pretrain", eta: 0.5, rounds: 6, window: 3, train_steps: 6000, curriculum_epochs: 5 },
    Preset { name: "addition-pretrain", eta: 0.1, rounds: 5, window: 3, train_steps: 6000, curriculum_epochs: 3 },
    Preset { name: "ni-pretrain", eta: 0.2, rounds: 1, window: 1, train_steps: 5000, curriculum_epochs: 5 },
    Preset { name: "lego-finetune", eta: 0.5, rounds: 10, window: 3, train_steps: 6000, curriculum_epochs: 5 },
    Preset { name: "addition-finetune", eta: 0.1, rounds: 5, window: 3, train_steps: 6000, curriculum_epochs: 3 },
    Preset { name: "spanish-qg", eta: 0.8, rounds: 6, window: 3, train_steps: 600, curriculum_epochs: 5 },
    Preset { name: "stance-detection", eta: 0.2, rounds: 6, window: 3, train_steps: 600, curriculum_epochs: 5 },
    Preset { name: "ni-ood", eta: 0.2, rounds: 10, window: 3, train_steps: 5000, curriculum_epochs: 5 },
    Preset { name: "redpajama", eta: 100.0, rounds: 1, window: 1, train_steps: 0, curriculum_epochs: 5 },
    Preset { name: "lego-short", eta: 0.5, rounds: 30, window: 3, train_steps: 1500, curriculum_epochs: 5 },
];

/// Learning rates swept in the ablations.
pub const ETA_SWEEP: [f64; 4] = [0.1, 0.2, 0.5, 0.8];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub fn preset(name: &str) -> Result<Preset> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .copied()
        .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {name:?}; known: {}", preset_names().join(", "))))
}

impl Preset {
    pub fn run_config(&self, selector: SelectorKind, samples: usize, seed: u64) -> RunConfig {
        RunConfig {
            name: None,
            eta: self.eta,
            rounds: self.rounds,
            samples,
            window: self.window,
            seed,
            selector,
            allocation: AllocationMode::LargestRemainder,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_presets() {
        let p = preset("lego-pretrain").unwrap();
        assert_eq!((p.eta, p.rounds, p.window), (0.5, 6, 3));
        let p = preset("addition-pretrain").unwrap();
        assert_eq!((p.eta, p.rounds, p.window), (0.1, 5, 3));
        let p = preset("lego-finetune").unwrap();
        assert_eq!((p.eta, p.rounds, p.window), (0.5, 10, 3));
        assert!(preset("nope").is_err());
    }

    #[test]
    fn presets_validate() {
        for name in preset_names() {
            let p = preset(name).unwrap();
            p.run_config(SelectorKind::Stratified, 6000, 0).validate().unwrap();
        }
    }
}
