//! Metrics, significance tests, confidence intervals, regime breakdowns,
//! and the sentiment-feature ablation rows.
//!
//! Conventions: the positive class for precision/recall is +1 (an up day);
//! McNemar's χ² uses the uncorrected (n01−n10)²/(n01+n10) form with the
//! continuity-corrected variant behind a flag; Wilson intervals use the
//! exact normal quantile for the requested confidence. A χ²(1 df) survival
//! value is erfc(√(x/2)), which keeps the p-value free of any incomplete-
//! gamma machinery.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{prediction_correlation, EnsembleError, MemberRecord};
use crate::features::Label;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction series ({preds}) and labels ({labels}) are misaligned")]
    Misaligned { preds: usize, labels: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("confidence level {0} outside (0, 1)")]
    BadConfidence(f64),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

// ---------------------------------------------------------------------------
// Core metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// None when the predictor never says +1.
    pub precision: Option<f64>,
    /// None when no actual +1 days exist.
    pub recall: Option<f64>,
}

pub fn classification_metrics(
    preds: &[Label],
    labels: &[Label],
) -> Result<ClassificationMetrics, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::Misaligned {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty("metrics"));
    }
    let mut correct = 0;
    let mut tp = 0;
    let mut fp = 0;
    let mut fneg = 0;
    for (&p, &y) in preds.iter().zip(labels) {
        if p == y {
            correct += 1;
        }
        match (p, y) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fneg += 1,
            _ => {}
        }
    }
    let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    let recall = (tp + fneg > 0).then(|| tp as f64 / (tp + fneg) as f64);
    Ok(ClassificationMetrics {
        n: preds.len(),
        correct,
        accuracy: correct as f64 / preds.len() as f64,
        precision,
        recall,
    })
}

/// Renders a ratio the way the tables do: two decimal places of percent.
pub fn percent(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

// ---------------------------------------------------------------------------
// McNemar's test
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// Days where A is wrong and B is right.
    pub n01: usize,
    /// Days where A is right and B is wrong.
    pub n10: usize,
    pub chi2: f64,
    pub p: f64,
}

/// Survival function of the χ² distribution with one degree of freedom.
pub fn chi2_sf_1df(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    libm::erfc((x / 2.0).sqrt())
}

pub fn mcnemar(
    preds_a: &[Label],
    preds_b: &[Label],
    labels: &[Label],
) -> Result<McNemarResult, EvalError> {
    mcnemar_with(preds_a, preds_b, labels, false)
}

/// `continuity` switches to the (|n01−n10|−1)² numerator.
pub fn mcnemar_with(
    preds_a: &[Label],
    preds_b: &[Label],
    labels: &[Label],
    continuity: bool,
) -> Result<McNemarResult, EvalError> {
    if preds_a.len() != labels.len() || preds_b.len() != labels.len() {
        return Err(EvalError::Misaligned {
            preds: preds_a.len().min(preds_b.len()),
            labels: labels.len(),
        });
    }
    let mut n01 = 0usize;
    let mut n10 = 0usize;
    for ((&a, &b), &y) in preds_a.iter().zip(preds_b).zip(labels) {
        match (a == y, b == y) {
            (false, true) => n01 += 1,
            (true, false) => n10 += 1,
            _ => {}
        }
    }
    let discordant = (n01 + n10) as f64;
    let chi2 = if discordant == 0.0 {
        0.0
    } else {
        let diff = n01 as f64 - n10 as f64;
        let num = if continuity {
            (diff.abs() - 1.0).max(0.0)
        } else {
            diff.abs()
        };
        num * num / discordant
    };
    let p = if discordant == 0.0 {
        1.0
    } else {
        chi2_sf_1df(chi2)
    };
    Ok(McNemarResult { n01, n10, chi2, p })
}

// ---------------------------------------------------------------------------
// Wilson score interval
// ---------------------------------------------------------------------------

/// Two-sided normal quantile for a confidence level, solved by Newton's
/// method on erfc — no quantile table, no rational approximation.
pub fn z_for_confidence(confidence: f64) -> Result<f64, EvalError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(EvalError::BadConfidence(confidence));
    }
    let alpha = 1.0 - confidence; // erfc(z/√2) = α at the two-sided z
    let mut z: f64 = 1.0;
    for _ in 0..100 {
        let f = libm::erfc(z / std::f64::consts::SQRT_2) - alpha;
        let fprime = -(2.0 / std::f64::consts::PI).sqrt() * (-z * z / 2.0).exp();
        let step = f / fprime;
        z -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    Ok(z)
}

/// Wilson score interval, clamped to [0, 1]. The boundary cases are exact:
/// zero successes pin the lower bound to 0 and n successes pin the upper
/// bound to 1, which the algebra forces anyway.
pub fn wilson_ci(successes: usize, n: usize, confidence: f64) -> Result<(f64, f64), EvalError> {
    if n == 0 {
        return Err(EvalError::Empty("wilson interval"));
    }
    assert!(successes <= n, "successes exceed trials");
    let z = z_for_confidence(confidence)?;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lower = if successes == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let upper = if successes == n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    Ok((lower, upper))
}

// ---------------------------------------------------------------------------
// Regime partition
// ---------------------------------------------------------------------------

/// Bucket boundaries over the conditioning series; buckets are left-closed:
/// (<b0), [b0,b1), [b1,b2), (≥b2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub boundaries: [f64; 3],
}

impl Default for RegimeSpec {
    fn default() -> Self {
        Self {
            boundaries: [15.0, 25.0, 35.0],
        }
    }
}

impl RegimeSpec {
    pub fn bucket_names(&self) -> [String; 4] {
        let [a, b, c] = self.boundaries;
        [
            format!("<{a}"),
            format!("[{a},{b})"),
            format!("[{b},{c})"),
            format!(">={c}"),
        ]
    }

    pub fn bucket_of(&self, v: f64) -> usize {
        let [a, b, c] = self.boundaries;
        if v < a {
            0
        } else if v < b {
            1
        } else if v < c {
            2
        } else {
            3
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeBucket {
    pub regime: String,
    pub days: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    pub wilson_low: Option<f64>,
    pub wilson_high: Option<f64>,
}

pub fn regime_partition(
    conditioning: &[f64],
    preds: &[Label],
    labels: &[Label],
    spec: &RegimeSpec,
) -> Result<Vec<RegimeBucket>, EvalError> {
    if conditioning.len() != preds.len() || preds.len() != labels.len() {
        return Err(EvalError::Misaligned {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let names = spec.bucket_names();
    let mut days = [0usize; 4];
    let mut correct = [0usize; 4];
    for ((&v, &p), &y) in conditioning.iter().zip(preds).zip(labels) {
        let b = spec.bucket_of(v);
        days[b] += 1;
        if p == y {
            correct[b] += 1;
        }
    }
    let mut out = Vec::with_capacity(4);
    for b in 0..4 {
        let (accuracy, lo, hi) = if days[b] > 0 {
            let (lo, hi) = wilson_ci(correct[b], days[b], 0.95)?;
            (
                Some(correct[b] as f64 / days[b] as f64),
                Some(lo),
                Some(hi),
            )
        } else {
            (None, None, None)
        };
        out.push(RegimeBucket {
            regime: names[b].clone(),
            days: days[b],
            correct: correct[b],
            accuracy,
            wilson_low: lo,
            wilson_high: hi,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Correlation matrix
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub ids: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    pub mean_same_architecture: Option<f64>,
    pub mean_different_architecture: Option<f64>,
    pub mean_overall: Option<f64>,
}

pub fn correlation_matrix(members: &[MemberRecord]) -> Result<CorrelationReport, EvalError> {
    if members.len() < 2 {
        return Err(EvalError::Empty("correlation matrix needs two members"));
    }
    let series: Vec<Vec<Label>> = members
        .iter()
        .map(|m| m.predictions.iter().map(|p| p.label).collect())
        .collect();
    let n = members.len();
    let mut matrix = vec![vec![0.0; n]; n];
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for i in 0..n {
        matrix[i][i] = 1.0;
        for j in i + 1..n {
            let phi = prediction_correlation(&series[i], &series[j])?;
            matrix[i][j] = phi;
            matrix[j][i] = phi;
            if members[i].id.architecture == members[j].id.architecture {
                same.push(phi);
            } else {
                diff.push(phi);
            }
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let all: Vec<f64> = same.iter().chain(diff.iter()).copied().collect();
    Ok(CorrelationReport {
        ids: members.iter().map(|m| m.id.to_string()).collect(),
        matrix,
        mean_same_architecture: mean(&same),
        mean_different_architecture: mean(&diff),
        mean_overall: mean(&all),
    })
}

// ---------------------------------------------------------------------------
// Ablation rows
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset: String,
    pub architecture: String,
    pub acc_without: f64,
    pub acc_with: f64,
    pub gain: f64,
    pub mcnemar: McNemarResult,
}

/// Pairs one model's predictions with and without the sentiment columns;
/// the McNemar direction is "without" as A, "with" as B, so n01 counts the
/// days the sentiment-equipped model fixed.
pub fn ablation_row(
    dataset: &str,
    architecture: &str,
    preds_without: &[Label],
    preds_with: &[Label],
    labels: &[Label],
) -> Result<AblationRow, EvalError> {
    let without = classification_metrics(preds_without, labels)?;
    let with = classification_metrics(preds_with, labels)?;
    let mc = mcnemar(preds_without, preds_with, labels)?;
    Ok(AblationRow {
        dataset: dataset.to_string(),
        architecture: architecture.to_string(),
        acc_without: without.accuracy,
        acc_with: with.accuracy,
        gain: with.accuracy - without.accuracy,
        mcnemar: mc,
    })
}

// ---------------------------------------------------------------------------
// Report container
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberEvalRow {
    pub member: String,
    pub dataset: String,
    pub architecture: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEvalRow {
    pub strategy: String,
    pub roster_size: usize,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// Significance against the single best individual member.
    pub mcnemar_vs_best_member: Option<McNemarResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub members: Vec<MemberEvalRow>,
    pub strategies: Vec<StrategyEvalRow>,
    pub correlation: Option<CorrelationReport>,
    pub regimes: Vec<RegimeBucket>,
    pub ablation: Vec<AblationRow>,
    pub notes: Vec<String>,
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), percent)
}

impl EvalReport {
    /// Fixed-width text rendering: one section per results table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("== Individual models ==\n");
        s.push_str(&format!(
            "{:<24} {:>5} {:>9} {:>11} {:>9} {:>19}\n",
            "member", "n", "accuracy", "precision", "recall", "95% CI"
        ));
        for m in &self.members {
            s.push_str(&format!(
                "{:<24} {:>5} {:>9} {:>11} {:>9} [{}, {}]\n",
                m.member,
                m.n,
                percent(m.accuracy),
                opt_pct(m.precision),
                opt_pct(m.recall),
                percent(m.wilson_low),
                percent(m.wilson_high)
            ));
        }
        s.push_str("\n== Ensemble strategies ==\n");
        s.push_str(&format!(
            "{:<28} {:>6} {:>5} {:>9} {:>19} {:>12}\n",
            "strategy", "roster", "n", "accuracy", "95% CI", "McNemar p"
        ));
        for r in &self.strategies {
            let p = r
                .mcnemar_vs_best_member
                .as_ref()
                .map_or_else(|| "-".into(), |m| format!("{:.4}", m.p));
            s.push_str(&format!(
                "{:<28} {:>6} {:>5} {:>9} [{}, {}] {:>12}\n",
                r.strategy,
                r.roster_size,
                r.n,
                percent(r.accuracy),
                percent(r.wilson_low),
                percent(r.wilson_high),
                p
            ));
        }
        s.push_str("\n== Prediction correlation ==\n");
        if let Some(c) = &self.correlation {
            for (i, id) in c.ids.iter().enumerate() {
                let row: Vec<String> = c.matrix[i].iter().map(|v| format!("{v:+.3}")).collect();
                s.push_str(&format!("{:<24} {}\n", id, row.join(" ")));
            }
            s.push_str(&format!(
                "mean same-architecture: {}   mean cross-architecture: {}   overall: {}\n",
                c.mean_same_architecture
                    .map_or_else(|| "-".into(), |v| format!("{v:.4}")),
                c.mean_different_architecture
                    .map_or_else(|| "-".into(), |v| format!("{v:.4}")),
                c.mean_overall
                    .map_or_else(|| "-".into(), |v| format!("{v:.4}")),
            ));
        } else {
            s.push_str("(single member; no pairs)\n");
        }
        s.push_str("\n== Regime breakdown ==\n");
        s.push_str(&format!(
            "{:<10} {:>5} {:>9} {:>19}\n",
            "regime", "days", "accuracy", "95% CI"
        ));
        for r in &self.regimes {
            let ci = match (r.wilson_low, r.wilson_high) {
                (Some(l), Some(h)) => format!("[{}, {}]", percent(l), percent(h)),
                _ => "-".into(),
            };
            s.push_str(&format!(
                "{:<10} {:>5} {:>9} {:>19}\n",
                r.regime,
                r.days,
                r.accuracy.map_or_else(|| "-".into(), percent),
                ci
            ));
        }
        s.push_str("\n== Sentiment-feature ablation ==\n");
        s.push_str(&format!(
            "{:<24} {:>11} {:>9} {:>8} {:>10}\n",
            "model", "without", "with", "gain", "McNemar p"
        ));
        for a in &self.ablation {
            s.push_str(&format!(
                "{:<24} {:>11} {:>9} {:>+8.2} {:>10.4}\n",
                format!("{}_{}", a.dataset, a.architecture),
                percent(a.acc_without),
                percent(a.acc_with),
                100.0 * a.gain,
                a.mcnemar.p
            ));
        }
        if !self.notes.is_empty() {
            s.push_str("\n== Notes ==\n");
            for n in &self.notes {
                s.push_str(&format!("- {n}\n"));
            }
        }
        s
    }
}
