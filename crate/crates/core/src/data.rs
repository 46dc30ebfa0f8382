//! OHLCV ingestion, validation, calendar alignment, synthetic data, and
//! temporal splits.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Expected CSV header, in order.
pub const CSV_HEADER: [&str; 6] = ["date", "open", "high", "low", "close", "volume"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: {msg}")]
    Validation { line: u64, msg: String },
    #[error("duplicate date {date} in series {symbol}")]
    DuplicateDate { symbol: String, date: NaiveDate },
    #[error("{0}")]
    Invalid(String),
    #[error("no series to align")]
    NoSeries,
    #[error("calendar intersection is empty")]
    EmptyIntersection,
    #[error("degenerate split: length {length} with train fraction {train_fraction} leaves an empty side")]
    DegenerateSplit { length: usize, train_fraction: f64 },
}

/// One daily bar. Prices are strictly positive; `high`/`low` bracket both
/// `open` and `close`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: u64,
}

impl OhlcvBar {
    /// Checks price positivity/finiteness and the high/low bracketing
    /// invariants.
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ] {
            if !v.is_finite() {
                return Err(format!("{name} is not finite ({v})"));
            }
            if v <= 0.0 {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        let hi_floor = self.open.max(self.close);
        let lo_ceil = self.open.min(self.close);
        if self.high < hi_floor {
            return Err(format!(
                "high {} is below max(open, close) = {hi_floor}",
                self.high
            ));
        }
        if self.low > lo_ceil {
            return Err(format!(
                "low {} is above min(open, close) = {lo_ceil}",
                self.low
            ));
        }
        Ok(())
    }
}

/// A date-sorted series of daily bars for one instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OhlcvSeries {
    pub symbol: String,
    pub bars: Vec<OhlcvBar>,
}

impl OhlcvSeries {
    /// Builds a series from unordered bars: sorts by date and rejects
    /// duplicates.
    pub fn new(symbol: impl Into<String>, mut bars: Vec<OhlcvBar>) -> Result<Self, DataError> {
        let symbol = symbol.into();
        bars.sort_by_key(|b| b.date);
        for w in bars.windows(2) {
            if w[0].date == w[1].date {
                return Err(DataError::DuplicateDate {
                    symbol,
                    date: w[0].date,
                });
            }
        }
        Ok(Self { symbol, bars })
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    /// Keeps only bars whose date is in `calendar`.
    pub fn restricted_to(&self, calendar: &BTreeSet<NaiveDate>) -> OhlcvSeries {
        OhlcvSeries {
            symbol: self.symbol.clone(),
            bars: self
                .bars
                .iter()
                .filter(|b| calendar.contains(&b.date))
                .copied()
                .collect(),
        }
    }
}

/// Several instruments restricted to their shared trading calendar. All
/// member series have identical dates, so a row index means the same day
/// everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPanel {
    pub dates: Vec<NaiveDate>,
    pub series: Vec<OhlcvSeries>,
}

impl AlignedPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn symbols(&self) -> Vec<&str> {
        self.series.iter().map(|s| s.symbol.as_str()).collect()
    }

    pub fn by_symbol(&self, symbol: &str) -> Option<&OhlcvSeries> {
        self.series.iter().find(|s| s.symbol == symbol)
    }
}

/// Restricts every series to the intersection of their calendars.
///
/// Errors if no series are given or the intersection is empty. Order of the
/// input series is preserved.
pub fn align_calendars(series: Vec<OhlcvSeries>) -> Result<AlignedPanel, DataError> {
    if series.is_empty() {
        return Err(DataError::NoSeries);
    }
    let mut shared: BTreeSet<NaiveDate> = series[0].bars.iter().map(|b| b.date).collect();
    for s in &series[1..] {
        let cal: BTreeSet<NaiveDate> = s.bars.iter().map(|b| b.date).collect();
        shared = shared.intersection(&cal).copied().collect();
    }
    if shared.is_empty() {
        return Err(DataError::EmptyIntersection);
    }
    let restricted: Vec<OhlcvSeries> = series.iter().map(|s| s.restricted_to(&shared)).collect();
    Ok(AlignedPanel {
        dates: shared.into_iter().collect(),
        series: restricted,
    })
}

/// Loads one instrument from CSV with the exact header
/// `date,open,high,low,close,volume`. Rows may arrive in any order; the
/// result is date-sorted. Parse and validation failures name the 1-based
/// line in the file (the header is line 1).
pub fn load_ohlcv_csv(path: impl AsRef<Path>) -> Result<OhlcvSeries, DataError> {
    let path = path.as_ref();
    let symbol = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let raw = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ohlcv_csv(&raw, symbol)
}

/// CSV parsing on an in-memory string; `load_ohlcv_csv` is a thin wrapper.
pub fn parse_ohlcv_csv(raw: &str, symbol: impl Into<String>) -> Result<OhlcvSeries, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(raw.as_bytes());
    {
        let headers = reader.headers().map_err(|e| DataError::Parse {
            line: 1,
            msg: format!("unreadable header: {e}"),
        })?;
        let got: Vec<&str> = headers.iter().collect();
        if got != CSV_HEADER {
            return Err(DataError::Parse {
                line: 1,
                msg: format!(
                    "header must be `{}`, got `{}`",
                    CSV_HEADER.join(","),
                    got.join(",")
                ),
            });
        }
    }

    let mut bars = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line())
                .unwrap_or(0);
            DataError::Parse {
                line,
                msg: format!("malformed row: {e}"),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 6 {
            return Err(DataError::Parse {
                line,
                msg: format!("expected 6 fields, got {}", record.len()),
            });
        }
        let field = |i: usize| record.get(i).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d").map_err(|e| {
            DataError::Parse {
                line,
                msg: format!("bad date `{}`: {e}", field(0)),
            }
        })?;
        let num = |i: usize, name: &str| -> Result<f64, DataError> {
            field(i).trim().parse::<f64>().map_err(|e| DataError::Parse {
                line,
                msg: format!("bad {name} `{}`: {e}", field(i)),
            })
        };
        let open = num(1, "open")?;
        let high = num(2, "high")?;
        let low = num(3, "low")?;
        let close = num(4, "close")?;
        let volume = field(5)
            .trim()
            .parse::<u64>()
            .map_err(|e| DataError::Parse {
                line,
                msg: format!("bad volume `{}`: {e}", field(5)),
            })?;
        let bar = OhlcvBar {
            date,
            open,
            high,
            low,
            close,
            volume,
        };
        bar.validate()
            .map_err(|msg| DataError::Validation { line, msg })?;
        bars.push(bar);
    }
    OhlcvSeries::new(symbol, bars)
}

/// Loader-compatible CSV text. Floats use Rust's shortest round-trip
/// formatting, so load → write → load is lossless.
pub fn ohlcv_to_csv(series: &OhlcvSeries) -> String {
    let mut out = String::new();
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    for b in &series.bars {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.date.format("%Y-%m-%d"),
            b.open,
            b.high,
            b.low,
            b.close,
            b.volume
        ));
    }
    out
}

pub fn write_ohlcv_csv(series: &OhlcvSeries, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    std::fs::write(path, ohlcv_to_csv(series)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One stretch of a synthetic market: `length` days with the given drift and
/// volatility of daily log-returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSegment {
    pub length: usize,
    pub drift: f64,
    pub volatility: f64,
}

/// Standard normal draw via Box-Muller. Hand-rolled (instead of a
/// distributions crate) so the exact stream is pinned by this code alone.
pub fn gauss(rng: &mut impl Rng) -> f64 {
    // 1 - u keeps the argument of ln strictly positive.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generates a geometric random walk with regime-dependent drift/volatility
/// and an optional planted momentum signal.
///
/// Daily log-returns are `drift + volatility * z` with `z` standard normal.
/// The regime plan is consumed in order; the final segment extends to cover
/// any remaining days. With probability `signal_strength`, the sign of the
/// step from day `t` to `t+1` (for `t >= 5`) is forced to match the sign of
/// the trailing 5-day momentum `close[t] - close[t-5]` (zero momentum counts
/// as up), which makes the next-day direction predictable from features in a
/// controlled way.
///
/// Open gaps, intraday ranges, and volumes are noise on top of the close
/// path; bars always satisfy the OHLC invariants. Dates are consecutive
/// calendar days starting 2020-01-01. The same `(seed, arguments)` pair
/// always produces the identical series.
pub fn synth_ohlcv(
    symbol: &str,
    n_days: usize,
    plan: &[RegimeSegment],
    signal_strength: f64,
    seed: u64,
) -> Result<OhlcvSeries, DataError> {
    if n_days == 0 {
        return Err(DataError::Invalid("n_days must be at least 1".into()));
    }
    if plan.is_empty() {
        return Err(DataError::Invalid("regime plan must be non-empty".into()));
    }
    for (i, seg) in plan.iter().enumerate() {
        if !(seg.volatility > 0.0) || !seg.volatility.is_finite() {
            return Err(DataError::Invalid(format!(
                "segment {i}: volatility must be positive and finite, got {}",
                seg.volatility
            )));
        }
        if !seg.drift.is_finite() {
            return Err(DataError::Invalid(format!(
                "segment {i}: drift must be finite, got {}",
                seg.drift
            )));
        }
    }
    if !(0.0..=1.0).contains(&signal_strength) {
        return Err(DataError::Invalid(format!(
            "signal_strength must lie in [0, 1], got {signal_strength}"
        )));
    }

    // Per-day (drift, vol): walk the plan; the last segment covers the tail.
    let mut day_params = Vec::with_capacity(n_days);
    let mut seg_idx = 0;
    let mut used_in_seg = 0;
    for _ in 0..n_days {
        let seg = &plan[seg_idx];
        day_params.push((seg.drift, seg.volatility));
        used_in_seg += 1;
        if used_in_seg >= seg.length && seg_idx + 1 < plan.len() {
            seg_idx += 1;
            used_in_seg = 0;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");

    let mut closes = Vec::with_capacity(n_days);
    closes.push(100.0_f64);
    for t in 0..n_days - 1 {
        let (drift, vol) = day_params[t + 1];
        let z = gauss(&mut rng);
        let u: f64 = rng.gen();
        let mut r = drift + vol * z;
        if t >= 5 && u < signal_strength {
            let momentum = closes[t] - closes[t - 5];
            let up = momentum >= 0.0;
            if up && r <= 0.0 {
                r = if r == 0.0 { vol * 0.5 } else { -r };
            } else if !up && r > 0.0 {
                r = -r;
            }
        }
        closes.push(closes[t] * r.exp());
    }

    let mut bars = Vec::with_capacity(n_days);
    for t in 0..n_days {
        let (_, vol) = day_params[t];
        let close = closes[t];
        let open = if t == 0 {
            close
        } else {
            let g = gauss(&mut rng);
            closes[t - 1] * (0.2 * vol * g).exp()
        };
        let span_up = gauss(&mut rng).abs();
        let span_dn = gauss(&mut rng).abs();
        let high = open.max(close) * (1.0 + 0.3 * vol * span_up);
        let low = open.min(close) * (1.0 - 0.3 * vol * span_dn).max(0.01);
        let vnoise = gauss(&mut rng);
        let volume = (1.0e6 * (0.3 * vnoise).exp()) as u64;
        let date = start + chrono::Days::new(t as u64);
        bars.push(OhlcvBar {
            date,
            open,
            high,
            low,
            close,
            volume,
        });
    }
    OhlcvSeries::new(symbol, bars)
}

/// A temporal train/test partition of a length-`length` series: indices
/// `[0, boundary)` are train, `[boundary, length)` are test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub boundary: usize,
    pub length: usize,
}

impl SplitSpec {
    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.boundary
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.boundary..self.length
    }
}

/// Splits `length` days at `floor(train_fraction * length)`. Both sides must
/// be non-empty.
pub fn temporal_split(length: usize, train_fraction: f64) -> Result<SplitSpec, DataError> {
    if !train_fraction.is_finite() || train_fraction <= 0.0 || train_fraction >= 1.0 {
        return Err(DataError::Invalid(format!(
            "train_fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let boundary = (train_fraction * length as f64).floor() as usize;
    if boundary == 0 || boundary >= length {
        return Err(DataError::DegenerateSplit {
            length,
            train_fraction,
        });
    }
    Ok(SplitSpec {
        train_fraction,
        boundary,
        length,
    })
}
