//! Random forest: bootstrap-sampled Gini trees with per-node feature
//! subsampling; the up-probability is the fraction of trees voting up.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{build_gini_tree, predict_tree, TreeNode};
use super::LearnerError;
use crate::features::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSpec {
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestSpec {
    fn default() -> Self {
        Self {
            n_trees: 150,
            max_depth: 15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub input_width: usize,
    pub spec: ForestSpec,
}

impl ForestModel {
    /// Fraction of trees voting up.
    pub fn p_up(&self, x: &[f64]) -> f64 {
        let up = self
            .trees
            .iter()
            .filter(|t| predict_tree(t, x) > 0.0)
            .count();
        up as f64 / self.trees.len() as f64
    }
}

/// Trains on raw (unstandardized) flat windows; each tree sees an n-sized
/// bootstrap of the rows and `⌈√d⌉` candidate features per node.
pub fn train_random_forest(
    x: &[Vec<f64>],
    y: &[Label],
    spec: &ForestSpec,
) -> Result<ForestModel, LearnerError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(LearnerError::InsufficientData(format!(
            "{} rows against {} labels",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    let d = x[0].len();
    let mtry = (d as f64).sqrt().ceil() as usize;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut trees = Vec::with_capacity(spec.n_trees);
    for _ in 0..spec.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
        let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        trees.push(build_gini_tree(x, y, &sample, spec.max_depth, mtry, &mut rng));
    }
    Ok(ForestModel {
        trees,
        input_width: d,
        spec: spec.clone(),
    })
}
