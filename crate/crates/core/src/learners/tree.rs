//! Decision trees: Gini-split classification trees for the forest and
//! Newton-leaf regression trees for gradient boosting.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::Label;

/// One node; leaves have `feature = None` and carry `leaf_value`. Internal
/// nodes route `x[feature] <= threshold` left, else right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: Option<Box<TreeNode>>,
    pub right: Option<Box<TreeNode>>,
    pub leaf_value: f64,
}

impl TreeNode {
    fn leaf(value: f64) -> Self {
        Self {
            feature: None,
            threshold: 0.0,
            left: None,
            right: None,
            leaf_value: value,
        }
    }

    pub fn depth(&self) -> usize {
        match (&self.left, &self.right) {
            (Some(l), Some(r)) => 1 + l.depth().max(r.depth()),
            _ => 0,
        }
    }
}

pub fn predict_tree(node: &TreeNode, x: &[f64]) -> f64 {
    let mut cur = node;
    while let Some(f) = cur.feature {
        cur = if x[f] <= cur.threshold {
            cur.left.as_ref().expect("internal node has children")
        } else {
            cur.right.as_ref().expect("internal node has children")
        };
    }
    cur.leaf_value
}

fn gini(pos: f64, neg: f64) -> f64 {
    let n = pos + neg;
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    let q = neg / n;
    1.0 - p * p - q * q
}

/// Draws `k` distinct feature indices, returned sorted so the scan order is
/// independent of the sampling order.
fn sample_features(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if k >= d {
        return (0..d).collect();
    }
    let mut pool: Vec<usize> = (0..d).collect();
    for i in 0..k {
        let j = i + rng.gen_range(0..pool.len() - i);
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

struct GiniSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn best_gini_split(
    x: &[Vec<f64>],
    y: &[Label],
    indices: &[usize],
    features: &[usize],
) -> Option<GiniSplit> {
    let n = indices.len() as f64;
    let total_pos = indices.iter().filter(|&&i| y[i] == 1).count() as f64;
    let total_neg = n - total_pos;
    let parent = gini(total_pos, total_neg);
    let mut best: Option<GiniSplit> = None;
    let mut pairs: Vec<(f64, Label)> = Vec::with_capacity(indices.len());
    for &f in features {
        pairs.clear();
        pairs.extend(indices.iter().map(|&i| (x[i][f], y[i])));
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let mut pos_left = 0.0;
        let mut neg_left = 0.0;
        for k in 0..pairs.len() - 1 {
            if pairs[k].1 == 1 {
                pos_left += 1.0;
            } else {
                neg_left += 1.0;
            }
            if pairs[k].0 == pairs[k + 1].0 {
                continue;
            }
            let n_left = pos_left + neg_left;
            let n_right = n - n_left;
            let weighted = (n_left * gini(pos_left, neg_left)
                + n_right * gini(total_pos - pos_left, total_neg - neg_left))
                / n;
            if weighted + 1e-12 < parent
                && best.as_ref().map_or(true, |b| weighted < b.impurity)
            {
                best = Some(GiniSplit {
                    feature: f,
                    threshold: 0.5 * (pairs[k].0 + pairs[k + 1].0),
                    impurity: weighted,
                });
            }
        }
    }
    best
}

/// Recursive Gini tree over the rows in `indices`; `mtry` features are
/// sampled per node. Leaves vote the majority label (ties go up).
pub fn build_gini_tree(
    x: &[Vec<f64>],
    y: &[Label],
    indices: &[usize],
    max_depth: usize,
    mtry: usize,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let pos = indices.iter().filter(|&&i| y[i] == 1).count();
    let neg = indices.len() - pos;
    let majority = if pos >= neg { 1.0 } else { -1.0 };
    if max_depth == 0 || indices.len() < 2 || pos == 0 || neg == 0 {
        return TreeNode::leaf(majority);
    }
    let d = x[0].len();
    let features = sample_features(d, mtry, rng);
    let Some(split) = best_gini_split(x, y, indices, &features) else {
        return TreeNode::leaf(majority);
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| x[i][split.feature] <= split.threshold);
    let left = build_gini_tree(x, y, &left_idx, max_depth - 1, mtry, rng);
    let right = build_gini_tree(x, y, &right_idx, max_depth - 1, mtry, rng);
    TreeNode {
        feature: Some(split.feature),
        threshold: split.threshold,
        left: Some(Box::new(left)),
        right: Some(Box::new(right)),
        leaf_value: majority,
    }
}

/// Leaf value for a Newton step on (gradient, hessian) sums, clamped so a
/// near-zero hessian cannot produce an explosive log-odds jump.
fn newton_leaf(g_sum: f64, h_sum: f64, eps: f64) -> f64 {
    (-g_sum / (h_sum + eps)).clamp(-10.0, 10.0)
}

fn newton_score(g: f64, h: f64, eps: f64) -> f64 {
    g * g / (h + eps)
}

struct NewtonSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn best_newton_split(
    x: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    indices: &[usize],
    eps: f64,
) -> Option<NewtonSplit> {
    let total_g: f64 = indices.iter().map(|&i| grad[i]).sum();
    let total_h: f64 = indices.iter().map(|&i| hess[i]).sum();
    let parent = newton_score(total_g, total_h, eps);
    let d = x[0].len();
    let mut best: Option<NewtonSplit> = None;
    let mut pairs: Vec<(f64, f64, f64)> = Vec::with_capacity(indices.len());
    for f in 0..d {
        pairs.clear();
        pairs.extend(indices.iter().map(|&i| (x[i][f], grad[i], hess[i])));
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let mut gl = 0.0;
        let mut hl = 0.0;
        for k in 0..pairs.len() - 1 {
            gl += pairs[k].1;
            hl += pairs[k].2;
            if pairs[k].0 == pairs[k + 1].0 {
                continue;
            }
            let gain =
                newton_score(gl, hl, eps) + newton_score(total_g - gl, total_h - hl, eps) - parent;
            if gain > 1e-12 && best.as_ref().map_or(true, |b| gain > b.gain) {
                best = Some(NewtonSplit {
                    feature: f,
                    threshold: 0.5 * (pairs[k].0 + pairs[k + 1].0),
                    gain,
                });
            }
        }
    }
    best
}

/// Regression tree on per-sample (gradient, hessian) pairs with gain
/// `G²/(H+ε)` and Newton leaf values; all features are candidates at every
/// node.
pub fn build_newton_tree(
    x: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    indices: &[usize],
    max_depth: usize,
    eps: f64,
) -> TreeNode {
    let g_sum: f64 = indices.iter().map(|&i| grad[i]).sum();
    let h_sum: f64 = indices.iter().map(|&i| hess[i]).sum();
    let value = newton_leaf(g_sum, h_sum, eps);
    if max_depth == 0 || indices.len() < 2 {
        return TreeNode::leaf(value);
    }
    let Some(split) = best_newton_split(x, grad, hess, indices, eps) else {
        return TreeNode::leaf(value);
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| x[i][split.feature] <= split.threshold);
    let left = build_newton_tree(x, grad, hess, &left_idx, max_depth - 1, eps);
    let right = build_newton_tree(x, grad, hess, &right_idx, max_depth - 1, eps);
    TreeNode {
        feature: Some(split.feature),
        threshold: split.threshold,
        left: Some(Box::new(left)),
        right: Some(Box::new(right)),
        leaf_value: value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy_xy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let y: Vec<Label> = x
            .iter()
            .map(|r| if r[1] > 0.6 || r[0] < 0.2 { 1 } else { -1 })
            .collect();
        (x, y)
    }

    /// Every (feature, midpoint) candidate, scored directly.
    fn exhaustive_best_impurity(x: &[Vec<f64>], y: &[Label]) -> f64 {
        let n = x.len() as f64;
        let mut best = f64::INFINITY;
        for f in 0..x[0].len() {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let thr = 0.5 * (w[0] + w[1]);
                let mut counts = [0.0f64; 4]; // (left+, left-), (right+, right-)
                for (r, &label) in x.iter().zip(y) {
                    let left = r[f] <= thr;
                    let idx = match (left, label == 1) {
                        (true, true) => 0,
                        (true, false) => 1,
                        (false, true) => 2,
                        (false, false) => 3,
                    };
                    counts[idx] += 1.0;
                }
                let nl = counts[0] + counts[1];
                let nr = counts[2] + counts[3];
                let weighted =
                    (nl * gini(counts[0], counts[1]) + nr * gini(counts[2], counts[3])) / n;
                if weighted < best {
                    best = weighted;
                }
            }
        }
        best
    }

    #[test]
    fn gini_stump_matches_exhaustive_scan() {
        let (x, y) = toy_xy(60, 3);
        let idx: Vec<usize> = (0..60).collect();
        let split = best_gini_split(&x, &y, &idx, &[0, 1, 2]).expect("split exists");
        let oracle = exhaustive_best_impurity(&x, &y);
        assert!(
            (split.impurity - oracle).abs() < 1e-12,
            "stump impurity {} vs exhaustive {}",
            split.impurity,
            oracle
        );
    }

    #[test]
    fn pure_node_becomes_leaf() {
        let x = vec![vec![0.1], vec![0.9], vec![0.4]];
        let y = vec![1, 1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = build_gini_tree(&x, &y, &[0, 1, 2], 5, 1, &mut rng);
        assert_eq!(t.feature, None);
        assert_eq!(t.leaf_value, 1.0);
    }

    #[test]
    fn single_informative_feature_is_learned() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 40.0 - 0.5]).collect();
        let y: Vec<Label> = x.iter().map(|r| if r[0] > 0.0 { 1 } else { -1 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = build_gini_tree(&x, &y, &(0..40).collect::<Vec<_>>(), 15, 1, &mut rng);
        for (r, &label) in x.iter().zip(&y) {
            let pred = if predict_tree(&t, r) > 0.0 { 1 } else { -1 };
            assert_eq!(pred, label);
        }
    }

    #[test]
    fn depth_limit_is_respected() {
        let (x, y) = toy_xy(200, 7);
        let idx: Vec<usize> = (0..200).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = build_gini_tree(&x, &y, &idx, 3, 3, &mut rng);
        assert!(t.depth() <= 3, "depth {}", t.depth());
    }

    #[test]
    fn leaf_majority_tie_goes_up() {
        let x = vec![vec![0.0], vec![0.0]];
        let y = vec![1, -1];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Identical feature values: no split possible, tied majority.
        let t = build_gini_tree(&x, &y, &[0, 1], 5, 1, &mut rng);
        assert_eq!(t.feature, None);
        assert_eq!(t.leaf_value, 1.0);
    }

    #[test]
    fn feature_sampling_is_deterministic_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = sample_features(135, 12, &mut rng);
        assert_eq!(a.len(), 12);
        let mut dedup = a.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 12, "duplicate features sampled");
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(a, sample_features(135, 12, &mut rng2));
    }

    #[test]
    fn newton_leaf_value_and_clamp() {
        assert!((newton_leaf(-3.0, 6.0, 0.0) - 0.5).abs() < 1e-15);
        assert_eq!(newton_leaf(-5.0, 1e-18, 1e-16), 10.0);
        assert_eq!(newton_leaf(5.0, 1e-18, 1e-16), -10.0);
    }

    #[test]
    fn newton_stump_matches_exhaustive_gain_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 50;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..2).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let grad: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let hess: Vec<f64> = (0..n).map(|_| 0.05 + rng.gen::<f64>()).collect();
        let idx: Vec<usize> = (0..n).collect();
        let eps = 1e-9;
        let split = best_newton_split(&x, &grad, &hess, &idx, eps).expect("split exists");

        let total_g: f64 = grad.iter().sum();
        let total_h: f64 = hess.iter().sum();
        let parent = newton_score(total_g, total_h, eps);
        let mut best_gain = f64::NEG_INFINITY;
        for f in 0..2 {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let thr = 0.5 * (w[0] + w[1]);
                let (mut gl, mut hl) = (0.0, 0.0);
                for i in 0..n {
                    if x[i][f] <= thr {
                        gl += grad[i];
                        hl += hess[i];
                    }
                }
                let gain = newton_score(gl, hl, eps)
                    + newton_score(total_g - gl, total_h - hl, eps)
                    - parent;
                if gain > best_gain {
                    best_gain = gain;
                }
            }
        }
        assert!(
            (split.gain - best_gain).abs() < 1e-9,
            "stump gain {} vs exhaustive {}",
            split.gain,
            best_gain
        );
    }

    #[test]
    fn tree_serializes_as_nested_records() {
        let (x, y) = toy_xy(30, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = build_gini_tree(&x, &y, &(0..30).collect::<Vec<_>>(), 4, 3, &mut rng);
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"feature\""));
        assert!(json.contains("\"threshold\""));
        assert!(json.contains("\"leaf_value\""));
        let back: TreeNode = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
    }
}
