//! Causal technical indicators, the 27-column feature matrix, directional
//! labels, and normalized inputs for the sentiment circuit.
//!
//! Rolling quantities are reported as `f64::NAN` until their window is fully
//! populated; nothing at index `t` ever reads data past `t`.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::OhlcvSeries;

/// Directional label: +1 for an up day, −1 otherwise.
pub type Label = i8;

pub const N_FEATURES: usize = 27;

/// First row where every rolling window is populated. The binding
/// constraint is the 20-day return volatility, which consumes returns at
/// indices `t-19..=t` and returns start at index 1.
pub const FEATURE_VALID_FROM: usize = 20;

/// First row where all four circuit inputs exist (10-day return volatility).
pub const QUANTUM_VALID_FROM: usize = 10;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "simple_return",
    "log_return",
    "volatility_5",
    "volatility_10",
    "volatility_20",
    "momentum_3",
    "momentum_5",
    "momentum_10",
    "close_over_sma_5",
    "close_over_sma_10",
    "close_over_sma_20",
    "close_over_ema_5",
    "close_over_ema_10",
    "close_over_ema_20",
    "bollinger_upper_gap",
    "bollinger_lower_gap",
    "bollinger_percent_b",
    "rsi_14",
    "volume_zscore_20",
    "range_ratio",
    "intraday_return",
    "mean_return_5",
    "mean_return_10",
    "mean_return_20",
    "gap_return",
    "quantum_sentiment",
    "quantum_sentiment_3d",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("series too short: need at least {need} rows, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("sentiment series has length {got}, expected {want}")]
    SentimentLength { want: usize, got: usize },
    #[error("feature `{name}` is not finite at row {index}")]
    NonFinite { name: &'static str, index: usize },
    #[error("train boundary {boundary} must lie in ({min}, {len}]")]
    BadBoundary {
        boundary: usize,
        min: usize,
        len: usize,
    },
    #[error("io error writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Simple and log returns; index 0 is undefined (NaN).
#[derive(Debug, Clone, PartialEq)]
pub struct Returns {
    pub simple: Vec<f64>,
    pub log: Vec<f64>,
}

pub fn returns(closes: &[f64]) -> Returns {
    assert!(closes.len() >= 2, "need at least two closes");
    assert!(
        closes.iter().all(|&c| c > 0.0),
        "closes must be strictly positive"
    );
    let mut simple = vec![f64::NAN; closes.len()];
    let mut log = vec![f64::NAN; closes.len()];
    for t in 1..closes.len() {
        simple[t] = (closes[t] - closes[t - 1]) / closes[t - 1];
        log[t] = (closes[t] / closes[t - 1]).ln();
    }
    Returns { simple, log }
}

/// Applies `f` to each fully-populated trailing window of width `w`;
/// windows containing NaN (or insufficient history) yield NaN.
fn rolling_apply(values: &[f64], w: usize, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    assert!(w >= 1, "window must be at least 1");
    let mut out = vec![f64::NAN; values.len()];
    for t in 0..values.len() {
        if t + 1 < w {
            continue;
        }
        let window = &values[t + 1 - w..=t];
        if window.iter().any(|v| v.is_nan()) {
            continue;
        }
        out[t] = f(window);
    }
    out
}

pub fn rolling_mean(values: &[f64], w: usize) -> Vec<f64> {
    rolling_apply(values, w, |win| win.iter().sum::<f64>() / w as f64)
}

fn population_std(window: &[f64]) -> f64 {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

/// Rolling population (divide-by-w) standard deviation.
pub fn rolling_volatility(values: &[f64], w: usize) -> Vec<f64> {
    assert!(w >= 2, "volatility window must be at least 2");
    rolling_apply(values, w, population_std)
}

/// Rate of change over `k` days: `(c_t − c_{t−k}) / c_{t−k}`.
pub fn momentum(closes: &[f64], k: usize) -> Vec<f64> {
    assert!(k >= 1, "horizon must be at least 1");
    let mut out = vec![f64::NAN; closes.len()];
    for t in k..closes.len() {
        out[t] = (closes[t] - closes[t - k]) / closes[t - k];
    }
    out
}

pub fn sma(closes: &[f64], w: usize) -> Vec<f64> {
    rolling_mean(closes, w)
}

/// EMA seeded with the SMA of the first `w` closes and a caller-supplied
/// smoothing factor. Exposed so tests can inject degenerate factors.
pub fn ema_with_alpha(closes: &[f64], w: usize, alpha: f64) -> Vec<f64> {
    assert!(w >= 1, "window must be at least 1");
    let mut out = vec![f64::NAN; closes.len()];
    if closes.len() < w {
        return out;
    }
    out[w - 1] = closes[..w].iter().sum::<f64>() / w as f64;
    for t in w..closes.len() {
        out[t] = alpha * closes[t] + (1.0 - alpha) * out[t - 1];
    }
    out
}

/// EMA with the conventional smoothing factor `α = 2/(w+1)`.
pub fn ema(closes: &[f64], w: usize) -> Vec<f64> {
    ema_with_alpha(closes, w, 2.0 / (w as f64 + 1.0))
}

/// Cutler-style RSI: simple means of gains and losses over the period.
/// All-gain windows read 100, all-loss windows 0, and a flat window (no
/// gains, no losses) reads 50.
pub fn rsi(closes: &[f64], period: usize) -> Vec<f64> {
    assert!(period >= 1, "period must be at least 1");
    let mut gains = vec![f64::NAN; closes.len()];
    let mut losses = vec![f64::NAN; closes.len()];
    for t in 1..closes.len() {
        let d = closes[t] - closes[t - 1];
        gains[t] = d.max(0.0);
        losses[t] = (-d).max(0.0);
    }
    let avg_gain = rolling_mean(&gains, period);
    let avg_loss = rolling_mean(&losses, period);
    let mut out = vec![f64::NAN; closes.len()];
    for t in 0..closes.len() {
        let (g, l) = (avg_gain[t], avg_loss[t]);
        if g.is_nan() || l.is_nan() {
            continue;
        }
        out[t] = if l == 0.0 && g == 0.0 {
            50.0
        } else if l == 0.0 {
            100.0
        } else {
            100.0 - 100.0 / (1.0 + g / l)
        };
    }
    out
}

/// Bollinger bands over closes: middle = SMA, bands at ±`k_sigma` population
/// standard deviations, and %B position within the band (NaN when the band
/// has zero width).
#[derive(Debug, Clone, PartialEq)]
pub struct Bollinger {
    pub upper: Vec<f64>,
    pub middle: Vec<f64>,
    pub lower: Vec<f64>,
    pub percent_b: Vec<f64>,
}

pub fn bollinger(closes: &[f64], w: usize, k_sigma: f64) -> Bollinger {
    assert!(w >= 2, "window must be at least 2");
    let middle = sma(closes, w);
    let sd = rolling_apply(closes, w, population_std);
    let n = closes.len();
    let mut upper = vec![f64::NAN; n];
    let mut lower = vec![f64::NAN; n];
    let mut percent_b = vec![f64::NAN; n];
    for t in 0..n {
        if middle[t].is_nan() {
            continue;
        }
        upper[t] = middle[t] + k_sigma * sd[t];
        lower[t] = middle[t] - k_sigma * sd[t];
        if upper[t] > lower[t] {
            percent_b[t] = (closes[t] - lower[t]) / (upper[t] - lower[t]);
        }
    }
    Bollinger {
        upper,
        middle,
        lower,
        percent_b,
    }
}

/// `y[t] = +1` iff `close[t+1] > close[t]`, else −1 (ties are down days).
/// The final index is unlabeled, so the result has length `T − 1`.
pub fn make_labels(closes: &[f64]) -> Vec<Label> {
    assert!(closes.len() >= 2, "need at least two closes");
    (0..closes.len() - 1)
        .map(|t| if closes[t + 1] > closes[t] { 1 } else { -1 })
        .collect()
}

/// Rolling z-score of volume; a window with (near-)zero spread maps to 0.
pub fn volume_zscore(volumes: &[f64], w: usize) -> Vec<f64> {
    assert!(w >= 2, "window must be at least 2");
    let mean = rolling_mean(volumes, w);
    let sd = rolling_apply(volumes, w, population_std);
    volumes
        .iter()
        .enumerate()
        .map(|(t, &v)| {
            if mean[t].is_nan() {
                f64::NAN
            } else if sd[t] < 1e-12 {
                0.0
            } else {
                (v - mean[t]) / sd[t]
            }
        })
        .collect()
}

/// Per-day feature rows, labels, and the first fully-defined row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dates: Vec<NaiveDate>,
    pub x: Vec<[f64; N_FEATURES]>,
    pub y: Vec<Label>,
    pub valid_from: usize,
    pub feature_names: [&'static str; N_FEATURES],
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Assembles the full 27-column matrix.
///
/// `sentiment`, when given, must be a per-day series aligned with the bars
/// (NaN where undefined); it fills column 25 with column 26 as its trailing
/// 3-day mean. When absent — the ablation configuration — both columns are
/// zero on every row, keeping downstream model shapes unchanged.
pub fn build_feature_matrix(
    series: &OhlcvSeries,
    sentiment: Option<&[f64]>,
) -> Result<FeatureMatrix, FeatureError> {
    let n = series.len();
    if n < FEATURE_VALID_FROM + 1 {
        return Err(FeatureError::TooShort {
            need: FEATURE_VALID_FROM + 1,
            got: n,
        });
    }
    if let Some(s) = sentiment {
        if s.len() != n {
            return Err(FeatureError::SentimentLength {
                want: n,
                got: s.len(),
            });
        }
    }

    let closes = series.closes();
    let opens: Vec<f64> = series.bars.iter().map(|b| b.open).collect();
    let highs: Vec<f64> = series.bars.iter().map(|b| b.high).collect();
    let lows: Vec<f64> = series.bars.iter().map(|b| b.low).collect();
    let volumes: Vec<f64> = series.bars.iter().map(|b| b.volume as f64).collect();

    let ret = returns(&closes);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(N_FEATURES);
    cols.push(ret.simple.clone());
    cols.push(ret.log.clone());
    for w in [5, 10, 20] {
        cols.push(rolling_volatility(&ret.simple, w));
    }
    for k in [3, 5, 10] {
        cols.push(momentum(&closes, k));
    }
    for w in [5, 10, 20] {
        let s = sma(&closes, w);
        cols.push(ratio_to(&closes, &s));
    }
    for w in [5, 10, 20] {
        let e = ema(&closes, w);
        cols.push(ratio_to(&closes, &e));
    }
    let bands = bollinger(&closes, 20, 2.0);
    cols.push(
        (0..n)
            .map(|t| (bands.upper[t] - closes[t]) / closes[t])
            .collect(),
    );
    cols.push(
        (0..n)
            .map(|t| (closes[t] - bands.lower[t]) / closes[t])
            .collect(),
    );
    cols.push(bands.percent_b.clone());
    cols.push(rsi(&closes, 14));
    cols.push(volume_zscore(&volumes, 20));
    cols.push((0..n).map(|t| (highs[t] - lows[t]) / closes[t]).collect());
    cols.push(
        (0..n)
            .map(|t| (closes[t] - opens[t]) / opens[t])
            .collect(),
    );
    for w in [5, 10, 20] {
        cols.push(rolling_mean(&ret.simple, w));
    }
    let mut gap = vec![f64::NAN; n];
    for t in 1..n {
        gap[t] = (opens[t] - closes[t - 1]) / closes[t - 1];
    }
    cols.push(gap);
    match sentiment {
        Some(s) => {
            cols.push(s.to_vec());
            cols.push(rolling_mean(s, 3));
        }
        None => {
            cols.push(vec![0.0; n]);
            cols.push(vec![0.0; n]);
        }
    }
    debug_assert_eq!(cols.len(), N_FEATURES);

    let mut x = vec![[f64::NAN; N_FEATURES]; n];
    for (c, col) in cols.iter().enumerate() {
        for t in 0..n {
            x[t][c] = col[t];
        }
    }
    for (t, row) in x.iter().enumerate().skip(FEATURE_VALID_FROM) {
        for (c, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(FeatureError::NonFinite {
                    name: FEATURE_NAMES[c],
                    index: t,
                });
            }
        }
    }

    Ok(FeatureMatrix {
        dates: series.dates(),
        x,
        y: make_labels(&closes),
        valid_from: FEATURE_VALID_FROM,
        feature_names: FEATURE_NAMES,
    })
}

fn ratio_to(closes: &[f64], denom: &[f64]) -> Vec<f64> {
    closes
        .iter()
        .zip(denom.iter())
        .map(|(&c, &d)| c / d)
        .collect()
}

/// The four circuit inputs, each min-max normalized into [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumInput {
    /// (5-day mean return, 10-day volatility, 5-day momentum, current return)
    pub x: [f64; 4],
}

/// Computes the circuit inputs for every day: raw features causally, then
/// min-max normalization with statistics from training rows
/// `[QUANTUM_VALID_FROM, boundary)` only. A component whose training range
/// is degenerate is fixed at 0.5; out-of-range test values clamp to [0,1].
/// Days before `QUANTUM_VALID_FROM` are `None`.
pub fn quantum_inputs(
    series: &OhlcvSeries,
    boundary: usize,
) -> Result<Vec<Option<QuantumInput>>, FeatureError> {
    let n = series.len();
    if boundary <= QUANTUM_VALID_FROM || boundary > n {
        return Err(FeatureError::BadBoundary {
            boundary,
            min: QUANTUM_VALID_FROM,
            len: n,
        });
    }
    let closes = series.closes();
    let ret = returns(&closes);
    let raw: [Vec<f64>; 4] = [
        rolling_mean(&ret.simple, 5),
        rolling_volatility(&ret.simple, 10),
        momentum(&closes, 5),
        ret.simple,
    ];

    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    for t in QUANTUM_VALID_FROM..boundary {
        for (c, col) in raw.iter().enumerate() {
            lo[c] = lo[c].min(col[t]);
            hi[c] = hi[c].max(col[t]);
        }
    }

    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        if t < QUANTUM_VALID_FROM {
            out.push(None);
            continue;
        }
        let mut x = [0.0; 4];
        for (c, col) in raw.iter().enumerate() {
            x[c] = if hi[c] - lo[c] < 1e-12 {
                0.5
            } else {
                ((col[t] - lo[c]) / (hi[c] - lo[c])).clamp(0.0, 1.0)
            };
        }
        out.push(Some(QuantumInput { x }));
    }
    Ok(out)
}

/// Renders the labeled rows (from `valid_from` through the last labeled day)
/// as CSV with 12-significant-digit floats; header is the feature names plus
/// `label`.
pub fn feature_matrix_to_csv(m: &FeatureMatrix) -> String {
    let mut out = String::new();
    out.push_str(&m.feature_names.join(","));
    out.push_str(",label\n");
    for t in m.valid_from..m.y.len() {
        let mut fields: Vec<String> = m.x[t].iter().map(|v| format!("{v:.11e}")).collect();
        fields.push(m.y[t].to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_feature_matrix_csv(
    m: &FeatureMatrix,
    path: impl AsRef<std::path::Path>,
) -> Result<(), FeatureError> {
    let path = path.as_ref();
    std::fs::write(path, feature_matrix_to_csv(m)).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })
}
