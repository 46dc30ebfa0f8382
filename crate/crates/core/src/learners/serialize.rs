//! Versioned JSON persistence for trained models.
//!
//! Every model writes the same envelope — architecture tag, hyperparameters,
//! training metadata, optional standardization stats, and weights as named
//! flat arrays with explicit shapes — so artifacts stay inspectable with
//! ordinary JSON tooling. Tree ensembles additionally serialize their trees
//! as nested `{feature, threshold, left, right, leaf_value}` records.
//! Weight maps are BTreeMaps, which keeps key order (and therefore the byte
//! output) deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::boost::{BoostModel, BoostSpec};
use super::forest::{ForestModel, ForestSpec};
use super::linalg::Mat;
use super::logistic::{LogisticModel, LogisticSpec};
use super::lstm::{LstmLayer, LstmModel, LstmSpec};
use super::transformer::{Block, LayerNorm, TransformerModel, TransformerSpec};
use super::tree::TreeNode;
use super::{LearnerError, Standardizer, TrainedModel};

pub const MODEL_DOC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightArray {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl WeightArray {
    fn vector(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len()],
            values: values.to_vec(),
        }
    }

    fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
        }
    }

    fn matrix(m: &Mat) -> Self {
        Self {
            shape: vec![m.rows, m.cols],
            values: m.data.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub final_loss: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationDoc {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub version: u32,
    pub architecture: String,
    pub input_width: usize,
    pub hyperparameters: Value,
    pub training: TrainingMeta,
    pub standardization: Option<StandardizationDoc>,
    pub weights: BTreeMap<String, WeightArray>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trees: Vec<TreeNode>,
}

fn std_doc(s: &Standardizer) -> StandardizationDoc {
    StandardizationDoc {
        mean: s.mean.clone(),
        std: s.std.clone(),
    }
}

fn std_from_doc(d: &StandardizationDoc) -> Standardizer {
    Standardizer {
        mean: d.mean.clone(),
        std: d.std.clone(),
    }
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn model_to_doc(model: &TrainedModel) -> Result<ModelDoc, LearnerError> {
    let mut weights = BTreeMap::new();
    let mut trees = Vec::new();
    let doc = match model {
        TrainedModel::Logistic(m) => {
            weights.insert("weights".into(), WeightArray::vector(&m.weights));
            weights.insert("bias".into(), WeightArray::scalar(m.bias));
            ModelDoc {
                version: MODEL_DOC_VERSION,
                architecture: "logistic".into(),
                input_width: m.weights.len(),
                hyperparameters: serde_json::to_value(&m.spec)?,
                training: TrainingMeta {
                    epochs_run: m.iters_run,
                    final_loss: finite_or_none(m.final_loss),
                    seed: 0,
                },
                standardization: Some(std_doc(&m.standardizer)),
                weights,
                trees,
            }
        }
        TrainedModel::RandomForest(m) => {
            trees = m.trees.clone();
            ModelDoc {
                version: MODEL_DOC_VERSION,
                architecture: "rforest".into(),
                input_width: m.input_width,
                hyperparameters: serde_json::to_value(&m.spec)?,
                training: TrainingMeta {
                    epochs_run: m.trees.len(),
                    final_loss: None,
                    seed: m.spec.seed,
                },
                standardization: None,
                weights,
                trees,
            }
        }
        TrainedModel::GradientBoost(m) => {
            weights.insert("base_score".into(), WeightArray::scalar(m.base_score));
            weights.insert("train_loss".into(), WeightArray::vector(&m.train_loss));
            trees = m.trees.clone();
            ModelDoc {
                version: MODEL_DOC_VERSION,
                architecture: "gboost".into(),
                input_width: m.input_width,
                hyperparameters: serde_json::to_value(&m.spec)?,
                training: TrainingMeta {
                    epochs_run: m.trees.len(),
                    final_loss: m.train_loss.last().copied().and_then(finite_or_none),
                    seed: 0,
                },
                standardization: None,
                weights,
                trees,
            }
        }
        TrainedModel::Lstm(m) => {
            for (l, layer) in m.layers.iter().enumerate() {
                weights.insert(format!("layer{l}.wf"), WeightArray::matrix(&layer.wf));
                weights.insert(format!("layer{l}.wi"), WeightArray::matrix(&layer.wi));
                weights.insert(format!("layer{l}.wc"), WeightArray::matrix(&layer.wc));
                weights.insert(format!("layer{l}.wo"), WeightArray::matrix(&layer.wo));
                weights.insert(format!("layer{l}.bf"), WeightArray::vector(&layer.bf));
                weights.insert(format!("layer{l}.bi"), WeightArray::vector(&layer.bi));
                weights.insert(format!("layer{l}.bc"), WeightArray::vector(&layer.bc));
                weights.insert(format!("layer{l}.bo"), WeightArray::vector(&layer.bo));
            }
            weights.insert("head.w".into(), WeightArray::vector(&m.head_w));
            weights.insert("head.b".into(), WeightArray::scalar(m.head_b));
            ModelDoc {
                version: MODEL_DOC_VERSION,
                architecture: "lstm".into(),
                input_width: m.spec.input_dim * m.spec.lookback,
                hyperparameters: serde_json::to_value(&m.spec)?,
                training: TrainingMeta {
                    epochs_run: m.epochs_run,
                    final_loss: finite_or_none(m.final_loss),
                    seed: m.spec.seed,
                },
                standardization: Some(std_doc(&m.standardizer)),
                weights,
                trees,
            }
        }
        TrainedModel::DecisionTransformer(m) => {
            weights.insert("input.w".into(), WeightArray::matrix(&m.win));
            weights.insert("input.b".into(), WeightArray::vector(&m.bin));
            for (i, b) in m.blocks.iter().enumerate() {
                weights.insert(format!("block{i}.wq"), WeightArray::matrix(&b.wq));
                weights.insert(format!("block{i}.wk"), WeightArray::matrix(&b.wk));
                weights.insert(format!("block{i}.wv"), WeightArray::matrix(&b.wv));
                weights.insert(format!("block{i}.wo"), WeightArray::matrix(&b.wo));
                weights.insert(format!("block{i}.bq"), WeightArray::vector(&b.bq));
                weights.insert(format!("block{i}.bk"), WeightArray::vector(&b.bk));
                weights.insert(format!("block{i}.bv"), WeightArray::vector(&b.bv));
                weights.insert(format!("block{i}.bo"), WeightArray::vector(&b.bo));
                weights.insert(format!("block{i}.ln1.gamma"), WeightArray::vector(&b.ln1.gamma));
                weights.insert(format!("block{i}.ln1.beta"), WeightArray::vector(&b.ln1.beta));
                weights.insert(format!("block{i}.ff.w1"), WeightArray::matrix(&b.w1));
                weights.insert(format!("block{i}.ff.b1"), WeightArray::vector(&b.b1));
                weights.insert(format!("block{i}.ff.w2"), WeightArray::matrix(&b.w2));
                weights.insert(format!("block{i}.ff.b2"), WeightArray::vector(&b.b2));
                weights.insert(format!("block{i}.ln2.gamma"), WeightArray::vector(&b.ln2.gamma));
                weights.insert(format!("block{i}.ln2.beta"), WeightArray::vector(&b.ln2.beta));
            }
            weights.insert("head.w".into(), WeightArray::vector(&m.head_w));
            weights.insert("head.b".into(), WeightArray::scalar(m.head_b));
            ModelDoc {
                version: MODEL_DOC_VERSION,
                architecture: "transformer".into(),
                input_width: m.spec.input_dim * m.spec.lookback,
                hyperparameters: serde_json::to_value(&m.spec)?,
                training: TrainingMeta {
                    epochs_run: m.epochs_run,
                    final_loss: finite_or_none(m.final_loss),
                    seed: m.spec.seed,
                },
                standardization: Some(std_doc(&m.standardizer)),
                weights,
                trees,
            }
        }
    };
    Ok(doc)
}

pub fn model_to_json(model: &TrainedModel) -> Result<String, LearnerError> {
    Ok(serde_json::to_string_pretty(&model_to_doc(model)?)?)
}

struct WeightReader<'a> {
    weights: &'a BTreeMap<String, WeightArray>,
}

impl<'a> WeightReader<'a> {
    fn vector(&self, name: &str, len: usize) -> Result<Vec<f64>, LearnerError> {
        let arr = self
            .weights
            .get(name)
            .ok_or_else(|| LearnerError::BadDocument(format!("missing weight array '{name}'")))?;
        if arr.shape != [len] || arr.values.len() != len {
            return Err(LearnerError::BadDocument(format!(
                "weight array '{name}' has shape {:?}, expected [{len}]",
                arr.shape
            )));
        }
        Ok(arr.values.clone())
    }

    fn scalar(&self, name: &str) -> Result<f64, LearnerError> {
        Ok(self.vector(name, 1)?[0])
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Mat, LearnerError> {
        let arr = self
            .weights
            .get(name)
            .ok_or_else(|| LearnerError::BadDocument(format!("missing weight array '{name}'")))?;
        if arr.shape != [rows, cols] || arr.values.len() != rows * cols {
            return Err(LearnerError::BadDocument(format!(
                "weight array '{name}' has shape {:?}, expected [{rows}, {cols}]",
                arr.shape
            )));
        }
        Ok(Mat {
            rows,
            cols,
            data: arr.values.clone(),
        })
    }
}

fn require_standardizer(doc: &ModelDoc) -> Result<Standardizer, LearnerError> {
    doc.standardization
        .as_ref()
        .map(std_from_doc)
        .ok_or_else(|| {
            LearnerError::BadDocument(format!(
                "{} document is missing standardization stats",
                doc.architecture
            ))
        })
}

pub fn doc_to_model(doc: &ModelDoc) -> Result<TrainedModel, LearnerError> {
    if doc.version != MODEL_DOC_VERSION {
        return Err(LearnerError::BadDocument(format!(
            "unsupported model document version {}",
            doc.version
        )));
    }
    let r = WeightReader {
        weights: &doc.weights,
    };
    let model = match doc.architecture.as_str() {
        "logistic" => {
            let spec: LogisticSpec = serde_json::from_value(doc.hyperparameters.clone())?;
            TrainedModel::Logistic(LogisticModel {
                weights: r.vector("weights", doc.input_width)?,
                bias: r.scalar("bias")?,
                spec,
                standardizer: require_standardizer(doc)?,
                iters_run: doc.training.epochs_run,
                final_loss: doc.training.final_loss.unwrap_or(f64::NAN),
            })
        }
        "rforest" => {
            let spec: ForestSpec = serde_json::from_value(doc.hyperparameters.clone())?;
            TrainedModel::RandomForest(ForestModel {
                trees: doc.trees.clone(),
                input_width: doc.input_width,
                spec,
            })
        }
        "gboost" => {
            let spec: BoostSpec = serde_json::from_value(doc.hyperparameters.clone())?;
            let loss_len = doc.trees.len() + 1;
            TrainedModel::GradientBoost(BoostModel {
                base_score: r.scalar("base_score")?,
                trees: doc.trees.clone(),
                spec,
                input_width: doc.input_width,
                train_loss: r.vector("train_loss", loss_len)?,
            })
        }
        "lstm" => {
            let spec: LstmSpec = serde_json::from_value(doc.hyperparameters.clone())?;
            let mut layers = Vec::with_capacity(spec.layer_sizes.len());
            let mut in_dim = spec.input_dim;
            for (l, &units) in spec.layer_sizes.iter().enumerate() {
                let cols = units + in_dim;
                layers.push(LstmLayer {
                    units,
                    input_dim: in_dim,
                    wf: r.matrix(&format!("layer{l}.wf"), units, cols)?,
                    wi: r.matrix(&format!("layer{l}.wi"), units, cols)?,
                    wc: r.matrix(&format!("layer{l}.wc"), units, cols)?,
                    wo: r.matrix(&format!("layer{l}.wo"), units, cols)?,
                    bf: r.vector(&format!("layer{l}.bf"), units)?,
                    bi: r.vector(&format!("layer{l}.bi"), units)?,
                    bc: r.vector(&format!("layer{l}.bc"), units)?,
                    bo: r.vector(&format!("layer{l}.bo"), units)?,
                });
                in_dim = units;
            }
            let head = *spec.layer_sizes.last().ok_or_else(|| {
                LearnerError::BadDocument("lstm document lists no layers".into())
            })?;
            TrainedModel::Lstm(LstmModel {
                layers,
                head_w: r.vector("head.w", head)?,
                head_b: r.scalar("head.b")?,
                standardizer: require_standardizer(doc)?,
                epochs_run: doc.training.epochs_run,
                final_loss: doc.training.final_loss.unwrap_or(f64::NAN),
                spec,
            })
        }
        "transformer" => {
            let spec: TransformerSpec = serde_json::from_value(doc.hyperparameters.clone())?;
            let d = spec.d_model;
            let mut blocks = Vec::with_capacity(spec.n_blocks);
            for i in 0..spec.n_blocks {
                blocks.push(Block {
                    wq: r.matrix(&format!("block{i}.wq"), d, d)?,
                    wk: r.matrix(&format!("block{i}.wk"), d, d)?,
                    wv: r.matrix(&format!("block{i}.wv"), d, d)?,
                    wo: r.matrix(&format!("block{i}.wo"), d, d)?,
                    bq: r.vector(&format!("block{i}.bq"), d)?,
                    bk: r.vector(&format!("block{i}.bk"), d)?,
                    bv: r.vector(&format!("block{i}.bv"), d)?,
                    bo: r.vector(&format!("block{i}.bo"), d)?,
                    ln1: LayerNorm {
                        gamma: r.vector(&format!("block{i}.ln1.gamma"), d)?,
                        beta: r.vector(&format!("block{i}.ln1.beta"), d)?,
                    },
                    w1: r.matrix(&format!("block{i}.ff.w1"), spec.d_ff, d)?,
                    b1: r.vector(&format!("block{i}.ff.b1"), spec.d_ff)?,
                    w2: r.matrix(&format!("block{i}.ff.w2"), d, spec.d_ff)?,
                    b2: r.vector(&format!("block{i}.ff.b2"), d)?,
                    ln2: LayerNorm {
                        gamma: r.vector(&format!("block{i}.ln2.gamma"), d)?,
                        beta: r.vector(&format!("block{i}.ln2.beta"), d)?,
                    },
                });
            }
            TrainedModel::DecisionTransformer(TransformerModel {
                win: r.matrix("input.w", d, spec.input_dim)?,
                bin: r.vector("input.b", d)?,
                blocks,
                head_w: r.vector("head.w", d)?,
                head_b: r.scalar("head.b")?,
                standardizer: require_standardizer(doc)?,
                epochs_run: doc.training.epochs_run,
                final_loss: doc.training.final_loss.unwrap_or(f64::NAN),
                spec,
            })
        }
        other => {
            return Err(LearnerError::BadDocument(format!(
                "unknown architecture '{other}'"
            )))
        }
    };
    Ok(model)
}

pub fn model_from_json(s: &str) -> Result<TrainedModel, LearnerError> {
    let doc: ModelDoc = serde_json::from_str(s)?;
    doc_to_model(&doc)
}

#[cfg(test)]
mod tests {
    use super::super::boost::train_gradient_boost;
    use super::super::forest::train_random_forest;
    use super::super::logistic::train_logistic;
    use super::super::lstm::train_lstm;
    use super::super::transformer::train_decision_transformer;
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_data(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<i8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect())
            .collect();
        let y = x
            .iter()
            .map(|r| if r[0] + r[1] > 0.0 { 1 } else { -1 })
            .collect();
        (x, y)
    }

    fn roundtrip(model: TrainedModel) -> (TrainedModel, String) {
        let json = model_to_json(&model).unwrap();
        let back = model_from_json(&json).unwrap();
        assert_eq!(back, model);
        // Byte-stable second pass: same document, same text.
        assert_eq!(model_to_json(&back).unwrap(), json);
        (back, json)
    }

    #[test]
    fn logistic_roundtrip_is_exact() {
        let (x, y) = toy_data(40, 6, 1);
        let std = Standardizer::fit(&x);
        let m = train_logistic(&x, &y, std, &LogisticSpec::default()).unwrap();
        let (_, json) = roundtrip(TrainedModel::Logistic(m));
        assert!(json.contains("\"architecture\": \"logistic\""));
        assert!(json.contains("\"standardization\""));
    }

    #[test]
    fn forest_roundtrip_keeps_nested_trees() {
        let (x, y) = toy_data(50, 5, 2);
        let spec = ForestSpec {
            n_trees: 7,
            max_depth: 4,
            seed: 3,
        };
        let m = train_random_forest(&x, &y, &spec).unwrap();
        let (back, json) = roundtrip(TrainedModel::RandomForest(m));
        assert!(json.contains("\"trees\""));
        assert!(json.contains("\"leaf_value\""));
        match back {
            TrainedModel::RandomForest(f) => assert_eq!(f.trees.len(), 7),
            _ => panic!("wrong variant"),
        }
    }

    #[test]
    fn boost_roundtrip_keeps_loss_history() {
        let (x, y) = toy_data(50, 5, 4);
        let spec = BoostSpec {
            n_rounds: 9,
            max_depth: 3,
            ..BoostSpec::default()
        };
        let m = train_gradient_boost(&x, &y, &spec).unwrap();
        let (back, _) = roundtrip(TrainedModel::GradientBoost(m));
        match back {
            TrainedModel::GradientBoost(b) => assert_eq!(b.train_loss.len(), 10),
            _ => panic!("wrong variant"),
        }
    }

    #[test]
    fn lstm_roundtrip_is_exact() {
        let (x, y) = toy_data(30, 12, 5);
        let spec = LstmSpec {
            input_dim: 3,
            lookback: 4,
            layer_sizes: vec![4, 3],
            epochs: 2,
            ..LstmSpec::default()
        };
        let std = Standardizer::fit(&x);
        let m = train_lstm(&x, &y, std, &spec).unwrap();
        roundtrip(TrainedModel::Lstm(m));
    }

    #[test]
    fn transformer_roundtrip_is_exact() {
        let (x, y) = toy_data(30, 12, 6);
        let spec = TransformerSpec {
            input_dim: 3,
            lookback: 4,
            d_model: 8,
            n_heads: 2,
            n_blocks: 2,
            d_ff: 8,
            epochs: 2,
            ..TransformerSpec::default()
        };
        let std = Standardizer::fit(&x);
        let m = train_decision_transformer(&x, &y, std, &spec).unwrap();
        roundtrip(TrainedModel::DecisionTransformer(m));
    }

    #[test]
    fn predictions_survive_roundtrip_bitwise() {
        let (x, y) = toy_data(40, 6, 7);
        let std = Standardizer::fit(&x);
        let m = train_logistic(&x, &y, std, &LogisticSpec::default()).unwrap();
        let model = TrainedModel::Logistic(m);
        let json = model_to_json(&model).unwrap();
        let back = model_from_json(&json).unwrap();
        for row in &x {
            let a = model.predict(row).unwrap();
            let b = back.predict(row).unwrap();
            assert_eq!(a.p_up.to_bits(), b.p_up.to_bits());
        }
    }

    #[test]
    fn bad_shape_is_rejected() {
        let (x, y) = toy_data(40, 6, 8);
        let std = Standardizer::fit(&x);
        let m = train_logistic(&x, &y, std, &LogisticSpec::default()).unwrap();
        let mut doc = model_to_doc(&TrainedModel::Logistic(m)).unwrap();
        doc.weights.get_mut("weights").unwrap().values.pop();
        doc.weights.get_mut("weights").unwrap().shape = vec![5];
        let err = doc_to_model(&doc).unwrap_err();
        assert!(matches!(err, LearnerError::BadDocument(_)));
    }

    #[test]
    fn unknown_architecture_is_rejected() {
        let (x, y) = toy_data(40, 6, 9);
        let std = Standardizer::fit(&x);
        let m = train_logistic(&x, &y, std, &LogisticSpec::default()).unwrap();
        let mut doc = model_to_doc(&TrainedModel::Logistic(m)).unwrap();
        doc.architecture = "perceptron".into();
        assert!(matches!(
            doc_to_model(&doc),
            Err(LearnerError::BadDocument(_))
        ));
    }

    #[test]
    fn version_gate_rejects_future_documents() {
        let (x, y) = toy_data(40, 6, 10);
        let std = Standardizer::fit(&x);
        let m = train_logistic(&x, &y, std, &LogisticSpec::default()).unwrap();
        let mut doc = model_to_doc(&TrainedModel::Logistic(m)).unwrap();
        doc.version = 2;
        assert!(doc_to_model(&doc).is_err());
    }
}
