//! The five base architectures, trained from scratch: windowing,
//! standardization, shared training plumbing, and per-day predictions.

mod boost;
mod forest;
mod linalg;
mod logistic;
mod lstm;
mod serialize;
mod transformer;
mod tree;

pub use boost::{train_gradient_boost, BoostModel, BoostSpec};
pub use forest::{train_random_forest, ForestModel, ForestSpec};
pub use linalg::{Adam, Mat};
pub use logistic::{loss_and_grad as logistic_loss_and_grad, train_logistic, LogisticModel, LogisticSpec};
pub use lstm::{train_lstm, LstmModel, LstmSpec};
pub use serialize::{model_from_json, model_to_json};
pub use transformer::{train_decision_transformer, TransformerModel, TransformerSpec};
pub use tree::{build_gini_tree, build_newton_tree, predict_tree, TreeNode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SplitSpec;
use crate::features::{FeatureMatrix, Label};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("{architecture} training diverged (non-finite loss) at epoch {epoch}")]
    Diverged {
        architecture: &'static str,
        epoch: usize,
    },
    #[error("input has {got} values, model expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("model document: {0}")]
    BadDocument(String),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
}

/// The five base architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Lstm,
    DecisionTransformer,
    GradientBoost,
    RandomForest,
    Logistic,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Lstm,
        Architecture::DecisionTransformer,
        Architecture::GradientBoost,
        Architecture::RandomForest,
        Architecture::Logistic,
    ];

    /// Stable identifier used in member ids, seeds, and file names.
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Lstm => "lstm",
            Architecture::DecisionTransformer => "transformer",
            Architecture::GradientBoost => "gboost",
            Architecture::RandomForest => "rforest",
            Architecture::Logistic => "logistic",
        }
    }

    /// Sequence length consumed per prediction: 10 for the transformer,
    /// 5 everywhere else.
    pub fn lookback(self) -> usize {
        match self {
            Architecture::DecisionTransformer => 10,
            _ => 5,
        }
    }

    pub fn parse(name: &str) -> Option<Architecture> {
        Architecture::ALL.iter().copied().find(|a| a.name() == name)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Sign convention used everywhere labels, votes, or weighted sums are
/// thresholded: zero maps to +1.
pub fn sign_label(v: f64) -> Label {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

/// One directional call: probability of an up day plus the derived label and
/// confidence `2|p_up − 0.5|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p_up: f64,
    pub label: Label,
    pub confidence: f64,
}

impl Prediction {
    pub fn from_p_up(p_up: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&p_up), "p_up {p_up} out of [0,1]");
        Self {
            p_up,
            label: sign_label(p_up - 0.5),
            confidence: 2.0 * (p_up - 0.5).abs(),
        }
    }
}

/// Lookback windows over the feature matrix. `flat[i]` is the window's
/// `lookback × n_features` values in chronological order; the window covers
/// days `[target_index[i] − lookback + 1, target_index[i]]` and predicts the
/// direction of the step out of `target_index[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub flat: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub target_index: Vec<usize>,
    pub lookback: usize,
    pub n_features: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn width(&self) -> usize {
        self.lookback * self.n_features
    }

    /// The window as per-day rows (a view into the flat storage).
    pub fn sequence(&self, i: usize) -> Vec<&[f64]> {
        self.flat[i].chunks_exact(self.n_features).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitWindows {
    pub train: WindowedDataset,
    pub test: WindowedDataset,
}

/// Builds train and test windows that never straddle the split: a training
/// window's label target stays strictly inside the training segment, and a
/// test window (including its whole lookback) lies entirely inside the test
/// segment. This window consumption is why the number of test predictions is
/// smaller than the number of test days.
pub fn assemble_windows(
    matrix: &FeatureMatrix,
    lookback: usize,
    split: &SplitSpec,
) -> Result<SplitWindows, LearnerError> {
    if split.length != matrix.len() {
        return Err(LearnerError::InsufficientData(format!(
            "split covers {} days but matrix has {}",
            split.length,
            matrix.len()
        )));
    }
    if lookback == 0 {
        return Err(LearnerError::InsufficientData("lookback must be ≥ 1".into()));
    }
    let t = matrix.len();
    let first_train = matrix.valid_from + lookback - 1;
    let last_train = split.boundary.wrapping_sub(2);
    let first_test = split.boundary + lookback - 1;
    let last_test = t.wrapping_sub(2);

    let build = |lo: usize, hi: usize| -> WindowedDataset {
        let mut flat = Vec::new();
        let mut labels = Vec::new();
        let mut target_index = Vec::new();
        if lo <= hi && hi < t {
            for target in lo..=hi {
                let mut row = Vec::with_capacity(lookback * crate::features::N_FEATURES);
                for day in target + 1 - lookback..=target {
                    row.extend_from_slice(&matrix.x[day]);
                }
                flat.push(row);
                labels.push(matrix.y[target]);
                target_index.push(target);
            }
        }
        WindowedDataset {
            flat,
            labels,
            target_index,
            lookback,
            n_features: crate::features::N_FEATURES,
        }
    };

    let train = build(first_train, last_train);
    let test = build(first_test, last_test);
    if train.is_empty() {
        return Err(LearnerError::InsufficientData(format!(
            "no training windows: valid_from {} + lookback {} reaches past boundary {}",
            matrix.valid_from, lookback, split.boundary
        )));
    }
    if test.is_empty() {
        return Err(LearnerError::InsufficientData(format!(
            "no test windows: boundary {} + lookback {} reaches past length {}",
            split.boundary, lookback, t
        )));
    }
    Ok(SplitWindows { train, test })
}

/// Per-column mean/std fitted on training windows. Columns with (near-)zero
/// spread pass through unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "cannot fit on an empty set");
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for row in rows {
            for (s, (v, m)) in std.iter_mut().zip(row.iter().zip(&mean)) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in std.iter_mut() {
            *s = s.sqrt();
        }
        Self { mean, std }
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(c, &v)| {
                if self.std[c] < 1e-12 {
                    v
                } else {
                    (v - self.mean[c]) / self.std[c]
                }
            })
            .collect()
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }
}

/// A fitted base learner with everything `predict` needs, including the
/// standardization statistics for the architectures that train on scaled
/// inputs (trees consume raw features).
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Logistic(LogisticModel),
    RandomForest(ForestModel),
    GradientBoost(BoostModel),
    Lstm(LstmModel),
    DecisionTransformer(TransformerModel),
}

impl TrainedModel {
    pub fn architecture(&self) -> Architecture {
        match self {
            TrainedModel::Logistic(_) => Architecture::Logistic,
            TrainedModel::RandomForest(_) => Architecture::RandomForest,
            TrainedModel::GradientBoost(_) => Architecture::GradientBoost,
            TrainedModel::Lstm(_) => Architecture::Lstm,
            TrainedModel::DecisionTransformer(_) => Architecture::DecisionTransformer,
        }
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        match self {
            TrainedModel::Logistic(m) => Some(&m.standardizer),
            TrainedModel::Lstm(m) => Some(&m.standardizer),
            TrainedModel::DecisionTransformer(m) => Some(&m.standardizer),
            TrainedModel::RandomForest(_) | TrainedModel::GradientBoost(_) => None,
        }
    }

    pub fn expected_width(&self) -> usize {
        match self {
            TrainedModel::Logistic(m) => m.weights.len(),
            TrainedModel::RandomForest(m) => m.input_width,
            TrainedModel::GradientBoost(m) => m.input_width,
            TrainedModel::Lstm(m) => m.spec.lookback * m.spec.input_dim,
            TrainedModel::DecisionTransformer(m) => m.spec.lookback * m.spec.input_dim,
        }
    }

    /// Predicts from a raw (unstandardized) flat window; scaling is applied
    /// internally where the architecture requires it. Dropout is always off.
    pub fn predict(&self, flat_window: &[f64]) -> Result<Prediction, LearnerError> {
        if flat_window.len() != self.expected_width() {
            return Err(LearnerError::ShapeMismatch {
                expected: self.expected_width(),
                got: flat_window.len(),
            });
        }
        let p_up = match self {
            TrainedModel::Logistic(m) => m.p_up(&m.standardizer.transform_row(flat_window)),
            TrainedModel::RandomForest(m) => m.p_up(flat_window),
            TrainedModel::GradientBoost(m) => m.p_up(flat_window),
            TrainedModel::Lstm(m) => m.p_up(&m.standardizer.transform_row(flat_window)),
            TrainedModel::DecisionTransformer(m) => {
                m.p_up(&m.standardizer.transform_row(flat_window))
            }
        };
        Ok(Prediction::from_p_up(p_up))
    }
}

/// Trains one architecture on its training windows with that architecture's
/// published hyperparameters. The seed pins every stochastic choice (weight
/// init, shuffling, dropout, bootstrap draws).
pub fn train_model(
    architecture: Architecture,
    train: &WindowedDataset,
    seed: u64,
) -> Result<TrainedModel, LearnerError> {
    if train.is_empty() {
        return Err(LearnerError::InsufficientData(
            "empty training window set".into(),
        ));
    }
    Ok(match architecture {
        Architecture::Logistic => {
            let stats = Standardizer::fit(&train.flat);
            let x = stats.transform(&train.flat);
            TrainedModel::Logistic(train_logistic(
                &x,
                &train.labels,
                stats,
                &LogisticSpec::default(),
            )?)
        }
        Architecture::RandomForest => TrainedModel::RandomForest(train_random_forest(
            &train.flat,
            &train.labels,
            &ForestSpec {
                seed,
                ..ForestSpec::default()
            },
        )?),
        Architecture::GradientBoost => TrainedModel::GradientBoost(train_gradient_boost(
            &train.flat,
            &train.labels,
            &BoostSpec::default(),
        )?),
        Architecture::Lstm => {
            let stats = Standardizer::fit(&train.flat);
            let x = stats.transform(&train.flat);
            let spec = LstmSpec {
                input_dim: train.n_features,
                lookback: train.lookback,
                seed,
                ..LstmSpec::default()
            };
            TrainedModel::Lstm(train_lstm(&x, &train.labels, stats, &spec)?)
        }
        Architecture::DecisionTransformer => {
            let stats = Standardizer::fit(&train.flat);
            let x = stats.transform(&train.flat);
            let spec = TransformerSpec {
                input_dim: train.n_features,
                lookback: train.lookback,
                seed,
                ..TransformerSpec::default()
            };
            TrainedModel::DecisionTransformer(train_decision_transformer(
                &x,
                &train.labels,
                stats,
                &spec,
            )?)
        }
    })
}
