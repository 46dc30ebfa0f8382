//! Member filtering and the seven aggregation strategies.
//!
//! Every strategy reduces a roster of per-day ±1 predictions to one label
//! per day via a weighted score; `sign(0) = +1` uniformly, and Top-K ties
//! on accuracy break by lexicographic member id (dataset, then
//! architecture). Aggregation is pure over immutable member records, so
//! member order never changes any output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Label;
use crate::learners::{sign_label, Architecture, Prediction};

pub const DEFAULT_FILTER_THRESHOLD: f64 = 0.52;
pub const DEFAULT_TOP_K: usize = 7;
pub const DEFAULT_ADAPTIVE_WINDOW: usize = 30;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("no qualifying members")]
    NoQualifyingMembers,
    #[error("top-k wants {k} members but only {available} qualify")]
    KTooLarge { k: usize, available: usize },
    #[error("member {id} has {got} predictions, expected {expected}")]
    AxisMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid strategy config: {0}")]
    BadConfig(String),
    #[error("correlation undefined: one series is constant and the other is not")]
    ConstantSeries,
    #[error("correlation needs at least 2 aligned days, got {0}")]
    TooShort(usize),
}

/// Member identity: which instrument's windows and which architecture.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemberId {
    pub dataset: String,
    pub architecture: Architecture,
}

impl MemberId {
    pub fn new(dataset: &str, architecture: Architecture) -> Self {
        Self {
            dataset: dataset.to_string(),
            architecture,
        }
    }

    /// Lexicographic key: dataset first, then architecture name.
    fn key(&self) -> (&str, &'static str) {
        (&self.dataset, self.architecture.name())
    }
}

impl PartialOrd for MemberId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MemberId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl std::fmt::Display for MemberId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}_{}", self.dataset, self.architecture.name())
    }
}

/// One trained model's test-segment track record: its selection accuracy
/// `a_i` and its per-day predictions on the shared target axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberRecord {
    pub id: MemberId,
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    TopK,
    ConfidenceWeighted,
    MajorityVote,
    AccuracyWeighted,
    DatasetSpecific(Architecture),
    AdaptiveDynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub k: usize,
    pub filter_threshold: f64,
    pub adaptive_window: usize,
    /// Bypass the accuracy filter (the "all members" baseline mode).
    pub naive: bool,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            k: DEFAULT_TOP_K,
            filter_threshold: DEFAULT_FILTER_THRESHOLD,
            adaptive_window: DEFAULT_ADAPTIVE_WINDOW,
            naive: false,
        }
    }

    pub fn strategy_name(&self) -> String {
        let base = match self.kind {
            StrategyKind::TopK => format!("top_{}", self.k),
            StrategyKind::ConfidenceWeighted => "confidence_weighted".into(),
            StrategyKind::MajorityVote => "majority_vote".into(),
            StrategyKind::AccuracyWeighted => "accuracy_weighted".into(),
            StrategyKind::DatasetSpecific(a) => format!("dataset_specific_{}", a.name()),
            StrategyKind::AdaptiveDynamic => "adaptive_dynamic".into(),
        };
        if self.naive {
            format!("naive_{base}")
        } else {
            base
        }
    }

    fn validate(&self) -> Result<(), EnsembleError> {
        if matches!(self.kind, StrategyKind::TopK) && self.k < 1 {
            return Err(EnsembleError::BadConfig("top-k requires k >= 1".into()));
        }
        if !(0.5..1.0).contains(&self.filter_threshold) {
            return Err(EnsembleError::BadConfig(format!(
                "filter threshold {} outside [0.5, 1)",
                self.filter_threshold
            )));
        }
        if matches!(self.kind, StrategyKind::AdaptiveDynamic) && self.adaptive_window < 1 {
            return Err(EnsembleError::BadConfig(
                "adaptive window must be at least 1 day".into(),
            ));
        }
        Ok(())
    }
}

/// One aggregated day: the weighted score, its sign, and how many roster
/// members emitted that sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayVote {
    pub label: Label,
    pub score: f64,
    pub agree_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutput {
    pub strategy: String,
    pub roster: Vec<MemberId>,
    pub days: Vec<DayVote>,
}

/// Keeps members whose accuracy strictly exceeds the threshold, in their
/// original order. May return an empty roster; callers decide whether that
/// is an error.
pub fn smart_filter<'a>(members: &'a [MemberRecord], threshold: f64) -> Vec<&'a MemberRecord> {
    members.iter().filter(|m| m.accuracy > threshold).collect()
}

/// The k highest-accuracy members; accuracy ties break toward the
/// lexicographically smaller id.
pub fn top_k<'a>(
    members: &[&'a MemberRecord],
    k: usize,
) -> Result<Vec<&'a MemberRecord>, EnsembleError> {
    if k > members.len() {
        return Err(EnsembleError::KTooLarge {
            k,
            available: members.len(),
        });
    }
    let mut sorted: Vec<&MemberRecord> = members.to_vec();
    sorted.sort_by(|a, b| {
        b.accuracy
            .partial_cmp(&a.accuracy)
            .expect("accuracies are finite")
            .then_with(|| a.id.cmp(&b.id))
    });
    sorted.truncate(k);
    Ok(sorted)
}

pub fn majority_vote(labels: &[Label]) -> Label {
    sign_label(labels.iter().map(|&l| l as f64).sum())
}

fn day_vote(roster: &[&MemberRecord], day: usize, weight: impl Fn(usize, &MemberRecord) -> f64) -> DayVote {
    let score: f64 = roster
        .iter()
        .enumerate()
        .map(|(i, m)| weight(i, m) * m.predictions[day].label as f64)
        .sum();
    let label = sign_label(score);
    let agree_count = roster
        .iter()
        .filter(|m| m.predictions[day].label == label)
        .count();
    DayVote {
        label,
        score,
        agree_count,
    }
}

/// Correctness indicator series per roster member against realized labels.
fn correctness(roster: &[&MemberRecord], labels: &[Label]) -> Vec<Vec<bool>> {
    roster
        .iter()
        .map(|m| {
            m.predictions
                .iter()
                .zip(labels)
                .map(|(p, &y)| p.label == y)
                .collect()
        })
        .collect()
}

/// Rolling-window member weights for day `t`: the fraction of correct
/// calls over `[t-window, t-1]`. During the warm-up (t < window) the
/// static selection accuracies are used instead, because the rolling
/// fraction is undefined before a full window exists.
pub fn adaptive_weights(
    correct: &[Vec<bool>],
    accuracies: &[f64],
    t: usize,
    window: usize,
) -> Vec<f64> {
    if t < window {
        return accuracies.to_vec();
    }
    correct
        .iter()
        .map(|c| {
            let hits = c[t - window..t].iter().filter(|&&b| b).count();
            hits as f64 / window as f64
        })
        .collect()
}

fn axis_length(members: &[MemberRecord]) -> Result<usize, EnsembleError> {
    let expected = members
        .first()
        .ok_or(EnsembleError::NoQualifyingMembers)?
        .predictions
        .len();
    for m in members {
        if m.predictions.len() != expected {
            return Err(EnsembleError::AxisMismatch {
                id: m.id.to_string(),
                expected,
                got: m.predictions.len(),
            });
        }
    }
    Ok(expected)
}

/// Runs one strategy end to end: roster selection (accuracy filter unless
/// the strategy is dataset-specific or explicitly naive), then per-day
/// aggregation. `labels` are the realized test labels; only the adaptive
/// strategy consults them.
pub fn run_strategy(
    config: &StrategyConfig,
    members: &[MemberRecord],
    labels: &[Label],
) -> Result<EnsembleOutput, EnsembleError> {
    config.validate()?;
    let n_days = axis_length(members)?;
    let roster: Vec<&MemberRecord> = match config.kind {
        StrategyKind::DatasetSpecific(arch) => members
            .iter()
            .filter(|m| m.id.architecture == arch)
            .collect(),
        StrategyKind::TopK => {
            let filtered = if config.naive {
                members.iter().collect()
            } else {
                smart_filter(members, config.filter_threshold)
            };
            top_k(&filtered, config.k)?
        }
        _ => {
            if config.naive {
                members.iter().collect()
            } else {
                smart_filter(members, config.filter_threshold)
            }
        }
    };
    if roster.is_empty() {
        return Err(EnsembleError::NoQualifyingMembers);
    }
    if matches!(config.kind, StrategyKind::AdaptiveDynamic) && labels.len() != n_days {
        return Err(EnsembleError::BadConfig(format!(
            "adaptive strategy needs {n_days} realized labels, got {}",
            labels.len()
        )));
    }
    let days: Vec<DayVote> = match config.kind {
        StrategyKind::TopK | StrategyKind::MajorityVote | StrategyKind::DatasetSpecific(_) => {
            (0..n_days).map(|d| day_vote(&roster, d, |_, _| 1.0)).collect()
        }
        StrategyKind::ConfidenceWeighted => (0..n_days)
            .map(|d| day_vote(&roster, d, |_, m| m.accuracy * m.predictions[d].confidence))
            .collect(),
        StrategyKind::AccuracyWeighted => (0..n_days)
            .map(|d| day_vote(&roster, d, |_, m| m.accuracy))
            .collect(),
        StrategyKind::AdaptiveDynamic => {
            let correct = correctness(&roster, labels);
            let accuracies: Vec<f64> = roster.iter().map(|m| m.accuracy).collect();
            (0..n_days)
                .map(|d| {
                    let w = adaptive_weights(&correct, &accuracies, d, config.adaptive_window);
                    day_vote(&roster, d, |i, _| w[i])
                })
                .collect()
        }
    };
    Ok(EnsembleOutput {
        strategy: config.strategy_name(),
        roster: roster.iter().map(|m| m.id.clone()).collect(),
        days,
    })
}

/// Phi coefficient (Pearson correlation of two ±1 series). Two identical
/// constant series correlate at 1; a constant against a varying series has
/// no defined correlation.
pub fn prediction_correlation(a: &[Label], b: &[Label]) -> Result<f64, EnsembleError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EnsembleError::TooShort(a.len().min(b.len())));
    }
    let const_a = a.iter().all(|&v| v == a[0]);
    let const_b = b.iter().all(|&v| v == b[0]);
    if const_a && const_b {
        return if a == b {
            Ok(1.0)
        } else {
            Err(EnsembleError::ConstantSeries)
        };
    }
    if const_a || const_b {
        return Err(EnsembleError::ConstantSeries);
    }
    let mut n_pp = 0.0f64;
    let mut n_pm = 0.0f64;
    let mut n_mp = 0.0f64;
    let mut n_mm = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        match (x, y) {
            (1, 1) => n_pp += 1.0,
            (1, _) => n_pm += 1.0,
            (_, 1) => n_mp += 1.0,
            _ => n_mm += 1.0,
        }
    }
    let denom = ((n_pp + n_pm) * (n_mp + n_mm) * (n_pp + n_mp) * (n_pm + n_mm)).sqrt();
    Ok((n_pp * n_mm - n_pm * n_mp) / denom)
}

/// `date,strategy,label,score,agree_count,roster_size` rows.
pub fn ensemble_to_csv(
    output: &EnsembleOutput,
    dates: &[chrono::NaiveDate],
) -> Result<String, EnsembleError> {
    if dates.len() != output.days.len() {
        return Err(EnsembleError::BadConfig(format!(
            "{} dates against {} aggregated days",
            dates.len(),
            output.days.len()
        )));
    }
    let mut s = String::from("date,strategy,label,score,agree_count,roster_size\n");
    for (date, day) in dates.iter().zip(&output.days) {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            date,
            output.strategy,
            day.label,
            day.score,
            day.agree_count,
            output.roster.len()
        ));
    }
    Ok(s)
}
