use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{check_fit_input, fit_on_columns, Columns, Tree, TreeParams};
use crate::dataset::LabeledExample;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    #[serde(flatten)]
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            bootstrap: true,
            tree: TreeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub k: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn from_trees(k: usize, trees: Vec<Tree>) -> Self {
        Self { k, trees }
    }

    /// Unweighted mean of the tree probabilities.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }
}

/// Seed of tree `index`. Tree 0 uses the forest seed itself, so a one-tree
/// forest without bootstrap is exactly `fit_tree` with the same seed.
fn tree_seed(seed: u64, index: usize) -> u64 {
    if index == 0 {
        seed
    } else {
        rng::derive(seed, index as u64)
    }
}

pub fn fit_forest(examples: &[LabeledExample], params: &ForestParams, seed: u64) -> Result<Forest> {
    check_fit_input(examples)?;
    if params.n_trees == 0 {
        return Err(Error::Config("forest: n_trees must be >= 1".into()));
    }
    let data = Columns::new(examples)?;
    params.tree.validate(data.k)?;
    let n = data.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::from_seed(tree_seed(seed, t));
            if params.bootstrap {
                let mut counts = vec![0u32; n];
                for _ in 0..n {
                    counts[r.random_range(0..n)] += 1;
                }
                fit_on_columns(&data, Some(&counts), &params.tree, r)
            } else {
                fit_on_columns(&data, None, &params.tree, r)
            }
        })
        .collect();
    Ok(Forest { k: data.k, trees })
}
