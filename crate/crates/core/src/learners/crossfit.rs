use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LearnerSpec;
use crate::dataset::{observed_subset, Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::rng;
use crate::tables::ProbMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossFitTarget {
    /// The expert decision `d`; every instance is usable.
    Decision,
    /// The outcome `y`; only screened-in instances are usable.
    Outcome,
}

pub fn target_examples(dataset: &Dataset, target: CrossFitTarget) -> Vec<LabeledExample> {
    match target {
        CrossFitTarget::Decision => dataset
            .instances()
            .iter()
            .map(|i| LabeledExample::new(i.id, i.x.clone(), i.d))
            .collect(),
        CrossFitTarget::Outcome => observed_subset(dataset),
    }
}

/// Out-of-fold probabilities: each usable instance is scored by a model fit
/// on the other `folds - 1` folds. Fold `f` fits with seed `derive(seed, f)`.
pub fn cross_fit_probs(
    dataset: &Dataset,
    target: CrossFitTarget,
    learner: &LearnerSpec,
    folds: usize,
    seed: u64,
) -> Result<ProbMap> {
    if folds < 2 {
        return Err(Error::Config(format!("folds must be >= 2, got {folds}")));
    }
    let examples = target_examples(dataset, target);
    if examples.len() < folds {
        return Err(Error::InvalidInput(format!(
            "{} usable instances cannot fill {folds} folds",
            examples.len()
        )));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng::from_seed(rng::derive(seed, rng::stream::CROSS_FIT)));
    let mut fold_of = vec![0usize; examples.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }

    let per_fold: Vec<Vec<(u64, f64)>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<LabeledExample> = examples
                .iter()
                .zip(&fold_of)
                .filter(|(_, &g)| g != f)
                .map(|(e, _)| e.clone())
                .collect();
            let model = learner.fit(&train, rng::derive(seed, f as u64))?;
            examples
                .iter()
                .zip(&fold_of)
                .filter(|(_, &g)| g == f)
                .map(|(e, _)| Ok((e.id, model.predict(&e.x)?)))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_fold.into_iter().flatten().collect())
}

/// Probabilities from a single model fit on every usable instance.
pub fn in_sample_probs(
    dataset: &Dataset,
    target: CrossFitTarget,
    learner: &LearnerSpec,
    seed: u64,
) -> Result<ProbMap> {
    let examples = target_examples(dataset, target);
    let model = learner.fit(&examples, seed)?;
    examples
        .iter()
        .map(|e| Ok((e.id, model.predict(&e.x)?)))
        .collect()
}
