//! Gradient boosting on the logistic loss with Newton leaf values and
//! shrinkage; probabilities come from the sigmoid of the additive score.

use serde::{Deserialize, Serialize};

use super::logistic::{log1p_exp, sigmoid};
use super::tree::{build_newton_tree, predict_tree, TreeNode};
use super::LearnerError;
use crate::features::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostSpec {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    /// Stabilizer added to hessian sums in leaf values and split gains.
    pub eps: f64,
}

impl Default for BoostSpec {
    fn default() -> Self {
        Self {
            n_rounds: 150,
            max_depth: 6,
            shrinkage: 0.1,
            eps: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostModel {
    /// Log-odds of the training class prior, the additive starting point.
    pub base_score: f64,
    pub trees: Vec<TreeNode>,
    pub spec: BoostSpec,
    pub input_width: usize,
    /// Mean training log-loss after each round (index 0 = prior only).
    pub train_loss: Vec<f64>,
}

impl BoostModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.base_score
            + self.spec.shrinkage
                * self
                    .trees
                    .iter()
                    .map(|t| predict_tree(t, x))
                    .sum::<f64>()
    }

    pub fn p_up(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }
}

/// Trains on raw flat windows. Each round fits a Newton regression tree to
/// the logistic-loss gradients/hessians at the current scores and adds it
/// with the configured shrinkage.
pub fn train_gradient_boost(
    x: &[Vec<f64>],
    y: &[Label],
    spec: &BoostSpec,
) -> Result<BoostModel, LearnerError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(LearnerError::InsufficientData(format!(
            "{} rows against {} labels",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let prior = (pos / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (prior / (1.0 - prior)).ln();

    let mean_loss = |scores: &[f64]| -> f64 {
        scores
            .iter()
            .zip(y)
            .map(|(&f, &yi)| log1p_exp(-(yi as f64) * f))
            .sum::<f64>()
            / n as f64
    };

    let mut scores = vec![base_score; n];
    let mut train_loss = vec![mean_loss(&scores)];
    let mut trees = Vec::with_capacity(spec.n_rounds);
    let all: Vec<usize> = (0..n).collect();
    for round in 0..spec.n_rounds {
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for i in 0..n {
            let p = sigmoid(scores[i]);
            let y01 = if y[i] == 1 { 1.0 } else { 0.0 };
            grad[i] = p - y01;
            hess[i] = p * (1.0 - p);
        }
        let tree = build_newton_tree(x, &grad, &hess, &all, spec.max_depth, spec.eps);
        for i in 0..n {
            scores[i] += spec.shrinkage * predict_tree(&tree, &x[i]);
        }
        trees.push(tree);
        let loss = mean_loss(&scores);
        if !loss.is_finite() {
            return Err(LearnerError::Diverged {
                architecture: "gboost",
                epoch: round,
            });
        }
        train_loss.push(loss);
    }
    Ok(BoostModel {
        base_score,
        trees,
        spec: spec.clone(),
        input_width: x[0].len(),
        train_loss,
    })
}
