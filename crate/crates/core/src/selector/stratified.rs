use crate::domain::{Mixture, Setting, SkillsGraph};
use crate::error::{Error, Result};

/// Uniform over all `k` training skills.
pub fn stratified(k: usize) -> Mixture {
    Mixture::uniform(k)
}

/// Training skills with a strictly positive edge into some evaluation skill.
pub fn prerequisites(graph: &SkillsGraph) -> Vec<usize> {
    (0..graph.k())
        .filter(|&i| graph.rows()[i].iter().any(|w| *w > 0.0))
        .collect()
}

/// Uniform over the training skills relevant to the evaluation set.
pub fn skill_stratified(graph: &SkillsGraph) -> Result<Mixture> {
    let k = graph.k();
    match graph.setting() {
        Setting::Continual => Ok(Mixture::uniform(k)),
        Setting::FineTune => {
            let mut support = prerequisites(graph);
            support.extend(graph.eval_in_train().into_iter().flatten());
            support.sort_unstable();
            support.dedup();
            Mixture::uniform_over(k, &support)
        }
        Setting::OutOfDomain => {
            let support = prerequisites(graph);
            if support.is_empty() {
                return Err(Error::NoPrerequisites);
            }
            Mixture::uniform_over(k, &support)
        }
    }
}
