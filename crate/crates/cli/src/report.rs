//! The run report: a single JSON document plus a fixed-width text
//! rendering. Everything in here is a pure function of config and seed —
//! no timestamps, no absolute paths — so reruns are byte-identical.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use quantens_core::evalstat::{percent, EvalReport};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalendarSummary {
    pub days: usize,
    pub boundary: usize,
    pub train_days: usize,
    pub test_days: usize,
    /// Test days every architecture can predict (after lookback warm-up).
    pub ensemble_days: usize,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    pub first_prediction_date: Option<NaiveDate>,
    pub last_prediction_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSummary {
    pub symbol: String,
    pub source: String,
    pub days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub symbol: String,
    pub samples: usize,
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRow {
    pub strategy: String,
    pub trade_count: usize,
    pub hit_rate: Option<f64>,
    pub sharpe: Option<f64>,
    pub max_drawdown: f64,
    pub final_equity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub quantum: String,
    pub selection: String,
    pub seed: u64,
    pub train_fraction: f64,
    pub target_symbol: String,
    pub conditioning_symbol: String,
    pub calendar: CalendarSummary,
    pub instruments: Vec<InstrumentSummary>,
    pub quantum_pretrain: Vec<PretrainSummary>,
    pub evaluation: EvalReport,
    pub backtests: Vec<BacktestRow>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "quantens run — target {} — quantum {} — selection {} — seed {}\n",
            self.target_symbol, self.quantum, self.selection, self.seed
        ));
        s.push_str(&format!(
            "calendar: {} days, boundary {} ({} train / {} test), {} ensemble days",
            self.calendar.days,
            self.calendar.boundary,
            self.calendar.train_days,
            self.calendar.test_days,
            self.calendar.ensemble_days
        ));
        match (
            self.calendar.first_prediction_date,
            self.calendar.last_prediction_date,
        ) {
            (Some(a), Some(b)) => s.push_str(&format!(" ({a} .. {b})\n")),
            _ => s.push('\n'),
        }
        for inst in &self.instruments {
            s.push_str(&format!(
                "instrument {:<12} {:<9} {:>5} days\n",
                inst.symbol, inst.source, inst.days
            ));
        }
        if !self.quantum_pretrain.is_empty() {
            s.push_str("\n== Circuit pretraining ==\n");
            s.push_str(&format!(
                "{:<12} {:>7} {:>7} {:>14} {:>14}\n",
                "symbol", "samples", "epochs", "initial loss", "final loss"
            ));
            for q in &self.quantum_pretrain {
                s.push_str(&format!(
                    "{:<12} {:>7} {:>7} {:>14.6e} {:>14.6e}\n",
                    q.symbol, q.samples, q.epochs, q.initial_loss, q.final_loss
                ));
            }
        }
        s.push('\n');
        s.push_str(&self.evaluation.to_text());
        if !self.backtests.is_empty() {
            s.push_str("\n== Backtest ==\n");
            s.push_str(&format!(
                "{:<26} {:>6} {:>9} {:>9} {:>9} {:>13}\n",
                "strategy", "trades", "hit rate", "sharpe", "max DD", "final equity"
            ));
            for b in &self.backtests {
                s.push_str(&format!(
                    "{:<26} {:>6} {:>9} {:>9} {:>9} {:>13.6}\n",
                    b.strategy,
                    b.trade_count,
                    b.hit_rate.map_or_else(|| "-".into(), percent),
                    b.sharpe
                        .map_or_else(|| "-".to_string(), |v| format!("{v:.3}")),
                    percent(b.max_drawdown),
                    b.final_equity
                ));
            }
        }
        s
    }
}
