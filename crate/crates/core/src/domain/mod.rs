//! Domain types shared by every other module.

mod graph;
mod mixture;
mod run;
mod skills;

pub use graph::{validate_graph, DensityClass, GraphReport, Setting, SkillsGraph};
pub use mixture::{argmax, normalize, Mixture, SIMPLEX_TOL};
pub use run::{
    AllocationMode, CurriculumDirection, LossState, RoundRecord, RunConfig, RunLog, SelectorKind,
    SkillItMode,
};
pub use skills::{numbered_skills, read_samples_jsonl, write_samples_jsonl, Sample, SkillId, SkillSet};
