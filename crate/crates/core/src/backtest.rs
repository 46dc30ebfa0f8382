//! Turns daily directional predictions into a close-to-close equity curve.
//!
//! A position opens at the close of day t only when enough roster members
//! agree (consensus gating) and realizes `position · r_{t→t+1}` minus the
//! round-trip cost, compounding multiplicatively. There is no intraday
//! modeling, no slippage, and no market impact; shorts are symmetric unless
//! the long-only flag is set. Sharpe uses the sample (n−1) standard
//! deviation annualized by √252, with zero risk-free rate.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::EnsembleOutput;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("prediction date {0} not found in the price series")]
    MisalignedDate(NaiveDate),
    #[error("no close after {0}; cannot settle a trade entered there")]
    MissingNextClose(NaiveDate),
    #[error("sharpe undefined: {0}")]
    SharpeUndefined(&'static str),
    #[error("invalid backtest config: {0}")]
    BadConfig(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionSizing {
    /// Unit position on every traded day.
    Full,
    /// Position scaled by |score| / roster size, capped at 1.
    ConfidenceScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// Round-trip cost charged once per traded day, on the traded size.
    pub cost: f64,
    /// Minimum agreeing members before a trade is taken.
    pub consensus_threshold: usize,
    pub sizing: PositionSizing,
    pub long_only: bool,
    pub annualization: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            cost: 0.0002,
            consensus_threshold: 6,
            sizing: PositionSizing::Full,
            long_only: false,
            annualization: 252.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayOutcome {
    pub date: NaiveDate,
    /// Signed position size in [−1, 1]; 0 means flat.
    pub position: f64,
    pub gross: f64,
    pub net: f64,
    /// Cumulative product of (1 + net) through this day, starting from 1.
    pub equity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquitySummary {
    pub trade_count: usize,
    /// Fraction of traded days with positive gross return; None without trades.
    pub hit_rate: Option<f64>,
    /// None when net returns carry no variance (e.g. zero trades).
    pub sharpe: Option<f64>,
    pub max_drawdown: f64,
    pub final_equity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    pub days: Vec<DayOutcome>,
    pub summary: EquitySummary,
}

/// The break-even algebra for a directional strategy: win probability
/// times the typical move, minus losses and costs.
pub fn expected_daily_return(accuracy: f64, mean_abs_daily_move: f64, cost: f64) -> f64 {
    accuracy * mean_abs_daily_move - (1.0 - accuracy) * mean_abs_daily_move - cost
}

/// Annualized mean/std of daily returns. Errors on fewer than two
/// observations or an exactly constant series.
pub fn sharpe(net_returns: &[f64], annualization: f64) -> Result<f64, BacktestError> {
    if net_returns.len() < 2 {
        return Err(BacktestError::SharpeUndefined(
            "needs at least two observations",
        ));
    }
    let n = net_returns.len() as f64;
    let mean = net_returns.iter().sum::<f64>() / n;
    let var = net_returns
        .iter()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / (n - 1.0);
    if var == 0.0 {
        return Err(BacktestError::SharpeUndefined("zero variance"));
    }
    Ok(mean / var.sqrt() * annualization.sqrt())
}

/// Largest peak-to-trough equity loss as a ratio of the running peak.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &e in equity {
        peak = peak.max(e);
        worst = worst.max(1.0 - e / peak);
    }
    worst
}

/// Settles one ensemble output against a close series. `dates`/`closes`
/// are the full aligned price history; each prediction date must appear
/// there and have a successor close.
pub fn simulate(
    output: &EnsembleOutput,
    prediction_dates: &[NaiveDate],
    dates: &[NaiveDate],
    closes: &[f64],
    config: &BacktestConfig,
) -> Result<EquityCurve, BacktestError> {
    if config.cost < 0.0 {
        return Err(BacktestError::BadConfig("negative cost".into()));
    }
    if dates.len() != closes.len() {
        return Err(BacktestError::BadConfig(format!(
            "{} dates against {} closes",
            dates.len(),
            closes.len()
        )));
    }
    if prediction_dates.len() != output.days.len() {
        return Err(BacktestError::BadConfig(format!(
            "{} prediction dates against {} aggregated days",
            prediction_dates.len(),
            output.days.len()
        )));
    }
    if output.days.is_empty() {
        return Err(BacktestError::Empty("no prediction days"));
    }
    let roster_size = output.roster.len().max(1) as f64;
    let mut days = Vec::with_capacity(output.days.len());
    let mut equity = 1.0;
    let mut trade_count = 0;
    let mut hits = 0;
    let mut cursor = 0usize; // prediction dates are chronological
    for (date, vote) in prediction_dates.iter().zip(&output.days) {
        while cursor < dates.len() && dates[cursor] < *date {
            cursor += 1;
        }
        if cursor >= dates.len() || dates[cursor] != *date {
            return Err(BacktestError::MisalignedDate(*date));
        }
        let mut position = 0.0;
        if vote.agree_count >= config.consensus_threshold
            && !(config.long_only && vote.label == -1)
        {
            let size = match config.sizing {
                PositionSizing::Full => 1.0,
                PositionSizing::ConfidenceScaled => (vote.score.abs() / roster_size).min(1.0),
            };
            position = vote.label as f64 * size;
        }
        let (gross, net) = if position != 0.0 {
            if cursor + 1 >= closes.len() {
                return Err(BacktestError::MissingNextClose(*date));
            }
            let r = closes[cursor + 1] / closes[cursor] - 1.0;
            let gross = position * r;
            trade_count += 1;
            if gross > 0.0 {
                hits += 1;
            }
            (gross, gross - config.cost * position.abs())
        } else {
            (0.0, 0.0)
        };
        equity *= 1.0 + net;
        days.push(DayOutcome {
            date: *date,
            position,
            gross,
            net,
            equity,
        });
    }
    let nets: Vec<f64> = days.iter().map(|d| d.net).collect();
    let curve: Vec<f64> = days.iter().map(|d| d.equity).collect();
    let summary = EquitySummary {
        trade_count,
        hit_rate: (trade_count > 0).then(|| hits as f64 / trade_count as f64),
        sharpe: sharpe(&nets, config.annualization).ok(),
        max_drawdown: max_drawdown(&curve),
        final_equity: equity,
    };
    Ok(EquityCurve { days, summary })
}

/// `date,position,gross,net,equity` rows.
pub fn equity_to_csv(curve: &EquityCurve) -> String {
    let mut s = String::from("date,position,gross,net,equity\n");
    for d in &curve.days {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            d.date, d.position, d.gross, d.net, d.equity
        ));
    }
    s
}
