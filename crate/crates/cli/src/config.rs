//! Pipeline configuration: a single JSON document with defaults applied,
//! strict key checking (typos fail loudly, and the error lists every
//! unknown key at once), and a canonical content hash.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use quantens_core::backtest::{BacktestConfig, PositionSizing};
use quantens_core::data::RegimeSegment;
use quantens_core::ensemble::{StrategyConfig, StrategyKind};
use quantens_core::learners::Architecture;

use crate::CliError;

pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub length: usize,
    pub drift: f64,
    pub volatility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub days: usize,
    #[serde(default)]
    pub signal_strength: f64,
    pub segments: Vec<SegmentSpec>,
    /// Generator seed; derived from the global seed and symbol when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SyntheticSpec {
    pub fn plan(&self) -> Vec<RegimeSegment> {
        self.segments
            .iter()
            .map(|s| RegimeSegment {
                length: s.length,
                drift: s.drift,
                volatility: s.volatility,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSpec {
    pub symbol: String,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantumConfig {
    pub enabled: bool,
    pub epochs: usize,
    pub learn_rate: f64,
    /// Base seed for circuit initialization; global seed when absent.
    pub seed: Option<u64>,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epochs: 100,
            learn_rate: 0.05,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfigSection {
    pub filter_threshold: f64,
    pub top_k: usize,
    pub adaptive_window: usize,
    /// Score member accuracy on the tail of the training segment instead of
    /// the test segment (which leaks selection information).
    pub honest_selection: bool,
    pub strategies: Vec<String>,
}

impl Default for EnsembleConfigSection {
    fn default() -> Self {
        Self {
            filter_threshold: 0.52,
            top_k: 7,
            adaptive_window: 30,
            honest_selection: false,
            strategies: vec![
                "top_k".into(),
                "confidence_weighted".into(),
                "majority_vote".into(),
                "accuracy_weighted".into(),
                "dataset_specific:lstm".into(),
                "adaptive_dynamic".into(),
                "naive_majority_vote".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSection {
    pub cost: f64,
    pub consensus_threshold: usize,
    pub sizing: PositionSizing,
    pub long_only: bool,
    pub annualization: f64,
}

impl Default for BacktestSection {
    fn default() -> Self {
        let d = BacktestConfig::default();
        Self {
            cost: d.cost,
            consensus_threshold: d.consensus_threshold,
            sizing: d.sizing,
            long_only: d.long_only,
            annualization: d.annualization,
        }
    }
}

impl BacktestSection {
    pub fn to_core(&self) -> BacktestConfig {
        BacktestConfig {
            cost: self.cost,
            consensus_threshold: self.consensus_threshold,
            sizing: self.sizing,
            long_only: self.long_only,
            annualization: self.annualization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub instruments: Vec<InstrumentSpec>,
    /// Instrument whose next-day direction the ensemble predicts and the
    /// backtest trades; first instrument when absent.
    #[serde(default)]
    pub target_symbol: Option<String>,
    /// Instrument whose close level buckets test days into regimes;
    /// the target when absent.
    #[serde(default)]
    pub conditioning_symbol: Option<String>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_architectures")]
    pub architectures: Vec<Architecture>,
    #[serde(default)]
    pub quantum: QuantumConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfigSection,
    #[serde(default)]
    pub backtest: BacktestSection,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_train_fraction() -> f64 {
    DEFAULT_TRAIN_FRACTION
}

fn default_architectures() -> Vec<Architecture> {
    Architecture::ALL.to_vec()
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// Allowed keys per config level, used to report *all* unknown keys in one
/// error instead of serde's first-hit behavior.
fn collect_unknown_keys(root: &Value) -> Vec<String> {
    fn check(value: &Value, path: &str, allowed: &[&str], out: &mut Vec<String>) {
        if let Value::Object(map) = value {
            for key in map.keys() {
                if !allowed.contains(&key.as_str()) {
                    out.push(if path.is_empty() {
                        key.clone()
                    } else {
                        format!("{path}.{key}")
                    });
                }
            }
        }
    }
    let mut out = Vec::new();
    check(
        root,
        "",
        &[
            "instruments",
            "target_symbol",
            "conditioning_symbol",
            "train_fraction",
            "architectures",
            "quantum",
            "ensemble",
            "backtest",
            "output_dir",
            "seed",
        ],
        &mut out,
    );
    if let Some(Value::Array(instruments)) = root.get("instruments") {
        for (i, inst) in instruments.iter().enumerate() {
            let at = format!("instruments[{i}]");
            check(inst, &at, &["symbol", "csv", "synthetic"], &mut out);
            if let Some(synth) = inst.get("synthetic") {
                let at = format!("{at}.synthetic");
                check(
                    synth,
                    &at,
                    &["days", "signal_strength", "segments", "seed"],
                    &mut out,
                );
                if let Some(Value::Array(segments)) = synth.get("segments") {
                    for (j, seg) in segments.iter().enumerate() {
                        check(
                            seg,
                            &format!("{at}.segments[{j}]"),
                            &["length", "drift", "volatility"],
                            &mut out,
                        );
                    }
                }
            }
        }
    }
    if let Some(q) = root.get("quantum") {
        check(q, "quantum", &["enabled", "epochs", "learn_rate", "seed"], &mut out);
    }
    if let Some(e) = root.get("ensemble") {
        check(
            e,
            "ensemble",
            &[
                "filter_threshold",
                "top_k",
                "adaptive_window",
                "honest_selection",
                "strategies",
            ],
            &mut out,
        );
    }
    if let Some(b) = root.get("backtest") {
        check(
            b,
            "backtest",
            &[
                "cost",
                "consensus_threshold",
                "sizing",
                "long_only",
                "annualization",
            ],
            &mut out,
        );
    }
    out
}

impl PipelineConfig {
    pub fn from_json(raw: &str) -> Result<Self, CliError> {
        let value: Value =
            serde_json::from_str(raw).map_err(|e| CliError::Config(format!("bad JSON: {e}")))?;
        let unknown = collect_unknown_keys(&value);
        if !unknown.is_empty() {
            return Err(CliError::Config(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )));
        }
        let config: PipelineConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&raw)
    }

    fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if self.instruments.is_empty() {
            problems.push("at least one instrument is required".to_string());
        }
        let mut seen = BTreeSet::new();
        for inst in &self.instruments {
            if inst.symbol.is_empty() {
                problems.push("instrument symbol must be non-empty".into());
            }
            if !seen.insert(inst.symbol.clone()) {
                problems.push(format!("duplicate instrument symbol {}", inst.symbol));
            }
            match (&inst.csv, &inst.synthetic) {
                (Some(_), Some(_)) => problems.push(format!(
                    "instrument {}: give either csv or synthetic, not both",
                    inst.symbol
                )),
                (None, None) => problems.push(format!(
                    "instrument {}: needs a csv path or a synthetic spec",
                    inst.symbol
                )),
                (Some(path), None) => {
                    if !path.exists() {
                        problems.push(format!(
                            "instrument {}: csv {} does not exist",
                            inst.symbol,
                            path.display()
                        ));
                    }
                }
                (None, Some(s)) => {
                    if !(0.0..=1.0).contains(&s.signal_strength) {
                        problems.push(format!(
                            "instrument {}: signal_strength {} outside [0,1]",
                            inst.symbol, s.signal_strength
                        ));
                    }
                    if s.days == 0 || s.segments.is_empty() {
                        problems.push(format!(
                            "instrument {}: synthetic spec needs days >= 1 and segments",
                            inst.symbol
                        ));
                    }
                }
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            problems.push(format!(
                "train_fraction {} outside (0,1)",
                self.train_fraction
            ));
        }
        if self.architectures.is_empty() {
            problems.push("at least one architecture is required".into());
        }
        for sym in [&self.target_symbol, &self.conditioning_symbol]
            .into_iter()
            .flatten()
        {
            if !self.instruments.iter().any(|i| &i.symbol == sym) {
                problems.push(format!("symbol {sym} is not an instrument"));
            }
        }
        if !(0.0..=1.0).contains(&self.ensemble.filter_threshold) {
            problems.push(format!(
                "ensemble.filter_threshold {} outside [0,1]",
                self.ensemble.filter_threshold
            ));
        }
        if self.ensemble.top_k == 0 {
            problems.push("ensemble.top_k must be at least 1".into());
        }
        if self.ensemble.adaptive_window == 0 {
            problems.push("ensemble.adaptive_window must be at least 1".into());
        }
        if self.ensemble.strategies.is_empty() {
            problems.push("ensemble.strategies must name at least one strategy".into());
        }
        for s in &self.ensemble.strategies {
            if let Err(e) = parse_strategy_token(s) {
                problems.push(e);
            }
        }
        if self.backtest.cost < 0.0 {
            problems.push(format!("backtest.cost {} is negative", self.backtest.cost));
        }
        if self.quantum.epochs == 0 && self.quantum.enabled {
            problems.push("quantum.epochs must be at least 1 when enabled".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("; ")))
        }
    }

    pub fn target_symbol(&self) -> &str {
        self.target_symbol
            .as_deref()
            .unwrap_or(&self.instruments[0].symbol)
    }

    pub fn conditioning_symbol(&self) -> &str {
        self.conditioning_symbol
            .as_deref()
            .unwrap_or_else(|| self.target_symbol())
    }

    /// Strategy configs in the order named by the config file.
    pub fn strategy_configs(&self) -> Vec<StrategyConfig> {
        self.ensemble
            .strategies
            .iter()
            .map(|token| {
                let (kind, naive) =
                    parse_strategy_token(token).expect("validated at parse time");
                let mut cfg = StrategyConfig::new(kind);
                cfg.k = self.ensemble.top_k;
                cfg.filter_threshold = self.ensemble.filter_threshold;
                cfg.adaptive_window = self.ensemble.adaptive_window;
                cfg.naive = naive;
                cfg
            })
            .collect()
    }

    /// Hash of the canonical (defaults-applied) serialization, so two files
    /// spelling the same settings differently hash identically.
    pub fn content_hash(&self) -> String {
        let canon = serde_json::to_vec(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&canon);
        hex(&h.finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_strategy_token(token: &str) -> Result<(StrategyKind, bool), String> {
    let (naive, rest) = match token.strip_prefix("naive_") {
        Some(rest) => (true, rest),
        None => (false, token),
    };
    let kind = match rest {
        "top_k" => StrategyKind::TopK,
        "confidence_weighted" => StrategyKind::ConfidenceWeighted,
        "majority_vote" => StrategyKind::MajorityVote,
        "accuracy_weighted" => StrategyKind::AccuracyWeighted,
        "adaptive_dynamic" => StrategyKind::AdaptiveDynamic,
        other => match other.strip_prefix("dataset_specific:") {
            Some(arch) => match Architecture::parse(arch) {
                Some(a) => StrategyKind::DatasetSpecific(a),
                None => return Err(format!("unknown architecture in strategy {token}")),
            },
            None => return Err(format!("unknown strategy {token}")),
        },
    };
    Ok((kind, naive))
}
