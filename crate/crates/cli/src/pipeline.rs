//! Staged execution of the full pipeline: ingest → sentiment → features →
//! windows → training → member records → strategies → evaluation →
//! backtest. Every stochastic choice flows from the global seed through a
//! stable hash, so adding an instrument never perturbs another model's
//! draw, and reruns are byte-identical.

use std::collections::BTreeMap;
use std::time::Instant;

use sha2::{Digest, Sha256};

use quantens_core::backtest::{simulate, EquityCurve};
use quantens_core::data::{
    align_calendars, parse_ohlcv_csv, synth_ohlcv, temporal_split, AlignedPanel, OhlcvSeries,
    SplitSpec,
};
use quantens_core::ensemble::{run_strategy, EnsembleOutput, MemberId, MemberRecord};
use quantens_core::evalstat::{
    classification_metrics, correlation_matrix, mcnemar, regime_partition, wilson_ci, AblationRow,
    EvalReport, MemberEvalRow, RegimeSpec, StrategyEvalRow,
};
use quantens_core::features::{
    build_feature_matrix, quantum_inputs, returns, FeatureMatrix, Label,
};
use quantens_core::learners::{
    assemble_windows, model_to_json, train_model, Architecture, Prediction, SplitWindows,
    TrainedModel,
};
use quantens_core::qsentiment::{
    pretrain, sentiment_series, CircuitParams, CircuitParamsDoc, PretrainMeta,
};

use crate::config::PipelineConfig;
use crate::report::{
    BacktestRow, CalendarSummary, InstrumentSummary, PretrainSummary, RunReport, REPORT_VERSION,
};
use crate::CliError;

/// First 8 little-endian bytes of SHA-256 over a versioned, delimited
/// string. Stable across platforms and releases of this tool.
pub fn derive_seed(global: u64, symbol: &str, role: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(format!("quantens/v1|{global}|{symbol}|{role}").as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

/// How much of the pipeline a subcommand runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Stop after training; emit model documents only.
    Train,
    /// Everything except the backtest.
    Evaluate,
    /// Full pipeline, emitting only backtest artifacts.
    Backtest,
    /// Full pipeline, all artifacts.
    Full,
    /// Full pipeline twice — sentiment on and off — plus the ablation table.
    Ablate,
}

impl Scope {
    fn wants_evaluation(self) -> bool {
        !matches!(self, Scope::Train)
    }

    fn wants_backtest(self) -> bool {
        matches!(self, Scope::Backtest | Scope::Full | Scope::Ablate)
    }
}

pub struct StageTimer {
    started: Instant,
    pub timings_ms: Vec<(String, u128)>,
}

impl StageTimer {
    fn new() -> Self {
        Self {
            started: Instant::now(),
            timings_ms: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        self.timings_ms
            .push((stage.to_string(), self.started.elapsed().as_millis()));
        self.started = Instant::now();
    }
}

struct InstrumentData {
    symbol: String,
    closes: Vec<f64>,
    matrix: FeatureMatrix,
    quantum_doc: Option<CircuitParamsDoc>,
    pretrain_summary: Option<PretrainSummary>,
}

/// One (dataset, architecture) slot, predictions already trimmed to the
/// shared test axis.
pub struct MemberBundle {
    pub records: Vec<MemberRecord>,
    pub own_labels: Vec<Vec<Label>>,
    pub models: Vec<(MemberId, TrainedModel)>,
}

pub struct PipelineOutcome {
    pub report: RunReport,
    pub quantum_docs: Vec<(String, CircuitParamsDoc)>,
    pub models: Vec<(MemberId, TrainedModel)>,
    /// Quantum-off twins from an ablation run.
    pub models_noq: Vec<(MemberId, TrainedModel)>,
    pub ensemble_outputs: Vec<EnsembleOutput>,
    pub ensemble_dates: Vec<chrono::NaiveDate>,
    pub equity_curves: Vec<(String, EquityCurve)>,
    pub timings_ms: Vec<(String, u128)>,
}

pub fn execute(
    config: &PipelineConfig,
    jobs: usize,
    scope: Scope,
) -> Result<PipelineOutcome, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::stage("setup", e))?;
    pool.install(|| execute_inner(config, scope))
}

fn execute_inner(config: &PipelineConfig, scope: Scope) -> Result<PipelineOutcome, CliError> {
    let mut timer = StageTimer::new();

    // -- ingest ------------------------------------------------------------
    let panel = ingest(config)?;
    let split = temporal_split(panel.len(), config.train_fraction)
        .map_err(|e| CliError::stage("ingest", e))?;
    timer.lap("ingest");

    // -- sentiment + features ----------------------------------------------
    let instruments = prepare_instruments(config, &panel, &split, config.quantum.enabled)?;
    timer.lap("features");

    // -- windows + training ------------------------------------------------
    let lmax = config
        .architectures
        .iter()
        .map(|a| a.lookback())
        .max()
        .expect("validated: at least one architecture");
    let bundle = train_members(config, &instruments, &split, lmax)?;
    timer.lap("train");

    let quantum_docs: Vec<(String, CircuitParamsDoc)> = instruments
        .iter()
        .filter_map(|d| d.quantum_doc.clone().map(|doc| (d.symbol.clone(), doc)))
        .collect();

    // Shared prediction axis: the latest-starting architecture decides
    // where ensembling can begin.
    let first_target = split.boundary + lmax - 1;
    let target = instrument(&instruments, config.target_symbol());
    let target_labels: Vec<Label> = target.matrix.y[first_target..panel.len() - 1].to_vec();
    let ensemble_dates: Vec<chrono::NaiveDate> =
        target.matrix.dates[first_target..panel.len() - 1].to_vec();

    if !scope.wants_evaluation() {
        let report = RunReport {
            version: REPORT_VERSION,
            quantum: quantum_flag(config),
            selection: selection_flag(config),
            seed: config.seed,
            train_fraction: config.train_fraction,
            target_symbol: config.target_symbol().to_string(),
            conditioning_symbol: config.conditioning_symbol().to_string(),
            calendar: calendar_summary(&panel, &split, &ensemble_dates),
            instruments: instrument_summaries(config, &panel),
            quantum_pretrain: instruments
                .iter()
                .filter_map(|d| d.pretrain_summary.clone())
                .collect(),
            evaluation: EvalReport {
                members: Vec::new(),
                strategies: Vec::new(),
                correlation: None,
                regimes: Vec::new(),
                ablation: Vec::new(),
                notes: vec!["training-only run; evaluation skipped".into()],
            },
            backtests: Vec::new(),
        };
        return Ok(PipelineOutcome {
            report,
            quantum_docs,
            models: bundle.models,
            models_noq: Vec::new(),
            ensemble_outputs: Vec::new(),
            ensemble_dates,
            equity_curves: Vec::new(),
            timings_ms: timer.timings_ms,
        });
    }

    // -- strategies ----------------------------------------------------------
    let mut strategy_configs = config.strategy_configs();
    // A configured K sized for a large desk would always fail on a small
    // roster; Top-K takes every qualifying member instead.
    for sc in &mut strategy_configs {
        if matches!(sc.kind, quantens_core::ensemble::StrategyKind::TopK) {
            let qualifying = if sc.naive {
                bundle.records.len()
            } else {
                quantens_core::ensemble::smart_filter(&bundle.records, sc.filter_threshold).len()
            };
            if qualifying > 0 {
                sc.k = sc.k.min(qualifying);
            }
        }
    }
    let mut ensemble_outputs = Vec::with_capacity(strategy_configs.len());
    for sc in &strategy_configs {
        let out = run_strategy(sc, &bundle.records, &target_labels)
            .map_err(|e| CliError::stage("ensemble", e))?;
        ensemble_outputs.push(out);
    }
    timer.lap("ensemble");

    // -- ablation twin run ---------------------------------------------------
    let (ablation, models_noq) = if scope == Scope::Ablate {
        let plain = prepare_instruments(config, &panel, &split, false)?;
        let twin = train_members(config, &plain, &split, lmax)?;
        let mut rows = Vec::new();
        for (i, with) in bundle.records.iter().enumerate() {
            let without = &twin.records[i];
            debug_assert_eq!(with.id, without.id);
            let preds_with: Vec<Label> = with.predictions.iter().map(|p| p.label).collect();
            let preds_without: Vec<Label> =
                without.predictions.iter().map(|p| p.label).collect();
            let row = quantens_core::evalstat::ablation_row(
                &with.id.dataset,
                with.id.architecture.name(),
                &preds_without,
                &preds_with,
                &bundle.own_labels[i],
            )
            .map_err(|e| CliError::stage("evaluate", e))?;
            rows.push(row);
        }
        (rows, twin.models)
    } else {
        (Vec::new(), Vec::new())
    };

    // -- evaluation ------------------------------------------------------------
    let evaluation = evaluate(
        config,
        &instruments,
        &bundle,
        &ensemble_outputs,
        &target_labels,
        first_target,
        ablation,
    )?;
    timer.lap("evaluate");

    // -- backtest ----------------------------------------------------------------
    let mut equity_curves = Vec::new();
    let mut backtest_rows = Vec::new();
    if scope.wants_backtest() {
        let target_series = panel
            .by_symbol(config.target_symbol())
            .expect("target validated");
        let dates = target_series.dates();
        let closes = target_series.closes();
        for out in &ensemble_outputs {
            let mut bt = config.backtest.to_core();
            // "At least 6 agree" presumes a large roster; smaller rosters
            // trade on unanimity instead of never trading.
            bt.consensus_threshold = bt.consensus_threshold.min(out.roster.len());
            let curve = simulate(out, &ensemble_dates, &dates, &closes, &bt)
                .map_err(|e| CliError::stage("backtest", e))?;
            backtest_rows.push(BacktestRow {
                strategy: out.strategy.clone(),
                trade_count: curve.summary.trade_count,
                hit_rate: curve.summary.hit_rate,
                sharpe: curve.summary.sharpe,
                max_drawdown: curve.summary.max_drawdown,
                final_equity: curve.summary.final_equity,
            });
            equity_curves.push((out.strategy.clone(), curve));
        }
        timer.lap("backtest");
    }

    let report = RunReport {
        version: REPORT_VERSION,
        quantum: quantum_flag(config),
        selection: selection_flag(config),
        seed: config.seed,
        train_fraction: config.train_fraction,
        target_symbol: config.target_symbol().to_string(),
        conditioning_symbol: config.conditioning_symbol().to_string(),
        calendar: calendar_summary(&panel, &split, &ensemble_dates),
        instruments: instrument_summaries(config, &panel),
        quantum_pretrain: instruments
            .iter()
            .filter_map(|d| d.pretrain_summary.clone())
            .collect(),
        evaluation,
        backtests: backtest_rows,
    };
    Ok(PipelineOutcome {
        report,
        quantum_docs,
        models: bundle.models,
        models_noq,
        ensemble_outputs,
        ensemble_dates,
        equity_curves,
        timings_ms: timer.timings_ms,
    })
}

fn quantum_flag(config: &PipelineConfig) -> String {
    if config.quantum.enabled { "on" } else { "off" }.to_string()
}

fn selection_flag(config: &PipelineConfig) -> String {
    if config.ensemble.honest_selection {
        "honest"
    } else {
        "paper-protocol"
    }
    .to_string()
}

fn instrument<'a>(instruments: &'a [InstrumentData], symbol: &str) -> &'a InstrumentData {
    instruments
        .iter()
        .find(|d| d.symbol == symbol)
        .expect("symbol validated against instruments")
}

fn ingest(config: &PipelineConfig) -> Result<AlignedPanel, CliError> {
    let mut list = Vec::with_capacity(config.instruments.len());
    for inst in &config.instruments {
        let series = match (&inst.csv, &inst.synthetic) {
            (Some(path), None) => {
                let raw = std::fs::read_to_string(path).map_err(|e| {
                    CliError::stage("ingest", format!("{}: {e}", path.display()))
                })?;
                parse_ohlcv_csv(&raw, inst.symbol.clone())
                    .map_err(|e| CliError::stage("ingest", e))?
            }
            (None, Some(spec)) => {
                let seed = spec
                    .seed
                    .unwrap_or_else(|| derive_seed(config.seed, &inst.symbol, "synth"));
                synth_ohlcv(
                    &inst.symbol,
                    spec.days,
                    &spec.plan(),
                    spec.signal_strength,
                    seed,
                )
                .map_err(|e| CliError::stage("ingest", e))?
            }
            _ => unreachable!("config validation enforces exactly one source"),
        };
        list.push(series);
    }
    align_calendars(list).map_err(|e| CliError::stage("ingest", e))
}

/// Pretrains one circuit per instrument (when enabled) and builds its
/// feature matrix; sentiment columns are zero otherwise.
fn prepare_instruments(
    config: &PipelineConfig,
    panel: &AlignedPanel,
    split: &SplitSpec,
    quantum_on: bool,
) -> Result<Vec<InstrumentData>, CliError> {
    use rayon::prelude::*;
    let symbols: Vec<String> = config
        .instruments
        .iter()
        .map(|i| i.symbol.clone())
        .collect();
    symbols
        .par_iter()
        .map(|symbol| {
            let series = panel.by_symbol(symbol).expect("panel keeps every symbol");
            if !quantum_on {
                let matrix = build_feature_matrix(series, None)
                    .map_err(|e| CliError::stage("features", format!("{symbol}: {e}")))?;
                return Ok(InstrumentData {
                    symbol: symbol.clone(),
                    closes: series.closes(),
                    matrix,
                    quantum_doc: None,
                    pretrain_summary: None,
                });
            }
            let (doc, summary, sentiment) = pretrain_instrument(config, symbol, series, split)?;
            let matrix = build_feature_matrix(series, Some(&sentiment))
                .map_err(|e| CliError::stage("features", format!("{symbol}: {e}")))?;
            Ok(InstrumentData {
                symbol: symbol.clone(),
                closes: series.closes(),
                matrix,
                quantum_doc: Some(doc),
                pretrain_summary: Some(summary),
            })
        })
        .collect()
}

fn pretrain_instrument(
    config: &PipelineConfig,
    symbol: &str,
    series: &OhlcvSeries,
    split: &SplitSpec,
) -> Result<(CircuitParamsDoc, PretrainSummary, Vec<f64>), CliError> {
    let stage = "quantum";
    let inputs =
        quantum_inputs(series, split.boundary).map_err(|e| CliError::stage(stage, e))?;
    let simple = returns(&series.closes()).simple;
    // Supervised pairs: the circuit at day t learns the next day's return;
    // both days must sit inside the training segment.
    let mut dataset = Vec::new();
    for t in 0..split.boundary.saturating_sub(1) {
        if let Some(x) = inputs[t] {
            dataset.push((x, simple[t + 1]));
        }
    }
    let base = config.quantum.seed.unwrap_or(config.seed);
    let seed = derive_seed(base, symbol, "quantum");
    let params0 = CircuitParams::small_random(seed);
    let outcome = pretrain(
        &params0,
        &dataset,
        config.quantum.epochs,
        config.quantum.learn_rate,
    )
    .map_err(|e| CliError::stage(stage, format!("{symbol}: {e}")))?;
    let sentiment = sentiment_series(&outcome.params, &inputs);
    let meta = PretrainMeta {
        epochs: config.quantum.epochs,
        learn_rate: config.quantum.learn_rate,
        samples: dataset.len(),
        initial_loss: outcome.initial_loss(),
        final_loss: outcome.final_loss(),
    };
    let doc = CircuitParamsDoc::new(&outcome.params, seed, Some(meta));
    let summary = PretrainSummary {
        symbol: symbol.to_string(),
        samples: dataset.len(),
        epochs: config.quantum.epochs,
        initial_loss: outcome.initial_loss(),
        final_loss: outcome.final_loss(),
    };
    Ok((doc, summary, sentiment))
}

/// Trains every (dataset, architecture) pair in parallel, then trims each
/// member's test predictions to the shared axis set by the longest
/// lookback.
fn train_members(
    config: &PipelineConfig,
    instruments: &[InstrumentData],
    split: &SplitSpec,
    lmax: usize,
) -> Result<MemberBundle, CliError> {
    use rayon::prelude::*;

    // Window assembly is cheap but shared across architectures with the
    // same lookback; build each (symbol, lookback) once.
    let mut windows: BTreeMap<(String, usize), SplitWindows> = BTreeMap::new();
    let lookbacks: std::collections::BTreeSet<usize> =
        config.architectures.iter().map(|a| a.lookback()).collect();
    for data in instruments {
        for &lb in &lookbacks {
            let w = assemble_windows(&data.matrix, lb, split).map_err(|e| {
                CliError::stage("windows", format!("{} lookback {lb}: {e}", data.symbol))
            })?;
            windows.insert((data.symbol.clone(), lb), w);
        }
    }

    struct Job<'a> {
        symbol: &'a str,
        architecture: Architecture,
        windows: &'a SplitWindows,
        seed: u64,
    }
    let jobs: Vec<Job> = instruments
        .iter()
        .flat_map(|data| {
            config.architectures.iter().map(|&architecture| Job {
                symbol: &data.symbol,
                architecture,
                windows: &windows[&(data.symbol.clone(), architecture.lookback())],
                seed: derive_seed(config.seed, &data.symbol, architecture.name()),
            })
        })
        .collect();

    let honest = config.ensemble.honest_selection;
    let trained: Vec<Result<(MemberId, TrainedModel, Vec<Prediction>, Vec<Label>, f64), CliError>> =
        jobs.par_iter()
            .map(|job| {
                let id = MemberId::new(job.symbol, job.architecture);
                let model = train_model(job.architecture, &job.windows.train, job.seed)
                    .map_err(|e| CliError::stage("train", format!("{id}: {e}")))?;
                // Trim to the shared axis: architectures with shorter
                // lookbacks produce extra early predictions.
                let offset = lmax - job.architecture.lookback();
                let test = &job.windows.test;
                let mut predictions = Vec::with_capacity(test.len() - offset);
                for flat in &test.flat[offset..] {
                    let p = model
                        .predict(flat)
                        .map_err(|e| CliError::stage("train", format!("{id}: {e}")))?;
                    predictions.push(p);
                }
                let own_labels = test.labels[offset..].to_vec();
                let accuracy = if honest {
                    let train = &job.windows.train;
                    let k = ((train.len() as f64) * 0.2).ceil().max(1.0) as usize;
                    let start = train.len() - k.min(train.len());
                    let mut correct = 0usize;
                    for (flat, &y) in train.flat[start..].iter().zip(&train.labels[start..]) {
                        let p = model
                            .predict(flat)
                            .map_err(|e| CliError::stage("train", format!("{id}: {e}")))?;
                        if p.label == y {
                            correct += 1;
                        }
                    }
                    correct as f64 / (train.len() - start) as f64
                } else {
                    let correct = predictions
                        .iter()
                        .zip(&own_labels)
                        .filter(|(p, &y)| p.label == y)
                        .count();
                    correct as f64 / own_labels.len() as f64
                };
                Ok((id, model, predictions, own_labels, accuracy))
            })
            .collect();

    let mut records = Vec::with_capacity(trained.len());
    let mut own_labels = Vec::with_capacity(trained.len());
    let mut models = Vec::with_capacity(trained.len());
    for item in trained {
        let (id, model, predictions, labels, accuracy) = item?;
        records.push(MemberRecord {
            id: id.clone(),
            accuracy,
            predictions,
        });
        own_labels.push(labels);
        models.push((id, model));
    }
    Ok(MemberBundle {
        records,
        own_labels,
        models,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    config: &PipelineConfig,
    instruments: &[InstrumentData],
    bundle: &MemberBundle,
    ensemble_outputs: &[EnsembleOutput],
    target_labels: &[Label],
    first_target: usize,
    ablation: Vec<AblationRow>,
) -> Result<EvalReport, CliError> {
    let stage = "evaluate";
    let mut notes = Vec::new();

    let mut member_rows = Vec::with_capacity(bundle.records.len());
    for (m, labels) in bundle.records.iter().zip(&bundle.own_labels) {
        let preds: Vec<Label> = m.predictions.iter().map(|p| p.label).collect();
        let met = classification_metrics(&preds, labels).map_err(|e| CliError::stage(stage, e))?;
        let (lo, hi) =
            wilson_ci(met.correct, met.n, 0.95).map_err(|e| CliError::stage(stage, e))?;
        member_rows.push(MemberEvalRow {
            member: m.id.to_string(),
            dataset: m.id.dataset.clone(),
            architecture: m.id.architecture.name().to_string(),
            n: met.n,
            correct: met.correct,
            accuracy: met.accuracy,
            precision: met.precision,
            recall: met.recall,
            wilson_low: lo,
            wilson_high: hi,
        });
    }

    // The single best individual against the *target* series anchors the
    // strategy significance tests.
    let best = bundle
        .records
        .iter()
        .map(|m| {
            let preds: Vec<Label> = m.predictions.iter().map(|p| p.label).collect();
            let correct = preds
                .iter()
                .zip(target_labels)
                .filter(|(p, y)| p == y)
                .count();
            (m.id.to_string(), preds, correct)
        })
        .max_by(|a, b| a.2.cmp(&b.2).then_with(|| b.0.cmp(&a.0)));

    let mut strategy_rows = Vec::with_capacity(ensemble_outputs.len());
    for out in ensemble_outputs {
        let preds: Vec<Label> = out.days.iter().map(|d| d.label).collect();
        let met =
            classification_metrics(&preds, target_labels).map_err(|e| CliError::stage(stage, e))?;
        let (lo, hi) =
            wilson_ci(met.correct, met.n, 0.95).map_err(|e| CliError::stage(stage, e))?;
        let mcnemar_vs_best_member = match &best {
            Some((_, best_preds, _)) => Some(
                mcnemar(best_preds, &preds, target_labels)
                    .map_err(|e| CliError::stage(stage, e))?,
            ),
            None => None,
        };
        strategy_rows.push(StrategyEvalRow {
            strategy: out.strategy.clone(),
            roster_size: out.roster.len(),
            n: met.n,
            correct: met.correct,
            accuracy: met.accuracy,
            wilson_low: lo,
            wilson_high: hi,
            mcnemar_vs_best_member,
        });
    }
    if let Some((best_id, _, correct)) = &best {
        notes.push(format!(
            "strategy significance is McNemar against the best individual member on the target series: {best_id} ({}/{} correct)",
            correct,
            target_labels.len()
        ));
    }

    let correlation = match correlation_matrix(&bundle.records) {
        Ok(c) => Some(c),
        Err(e) => {
            notes.push(format!("prediction correlation unavailable: {e}"));
            None
        }
    };

    // Regimes condition the first configured strategy on the conditioning
    // instrument's close level.
    let cond = instruments
        .iter()
        .find(|d| d.symbol == config.conditioning_symbol())
        .expect("conditioning symbol validated");
    let regimes = match ensemble_outputs.first() {
        Some(first) => {
            let cond_series: Vec<f64> = (0..first.days.len())
                .map(|i| cond.closes[first_target + i])
                .collect();
            let preds: Vec<Label> = first.days.iter().map(|d| d.label).collect();
            notes.push(format!(
                "regime table conditions {} on {} closes (boundaries {:?})",
                first.strategy,
                config.conditioning_symbol(),
                RegimeSpec::default().boundaries
            ));
            regime_partition(&cond_series, &preds, target_labels, &RegimeSpec::default())
                .map_err(|e| CliError::stage(stage, e))?
        }
        None => Vec::new(),
    };

    if config.ensemble.honest_selection {
        notes.push(
            "selection accuracies a_i come from the last 20% of training windows (honest mode)"
                .into(),
        );
    } else {
        notes.push(
            "selection accuracies a_i are measured on the test segment itself (paper-protocol selection); this leaks test information into roster choice"
                .into(),
        );
    }
    if config.quantum.enabled {
        notes.push("quantum: on".into());
    } else {
        notes.push("quantum: off — sentiment columns are zero".into());
    }
    notes.push(
        "confidence intervals are Wilson score intervals; narrower intervals than Wilson at the same n and level are not binomially attainable"
            .into(),
    );

    Ok(EvalReport {
        members: member_rows,
        strategies: strategy_rows,
        correlation,
        regimes,
        ablation,
        notes,
    })
}

fn calendar_summary(
    panel: &AlignedPanel,
    split: &SplitSpec,
    ensemble_dates: &[chrono::NaiveDate],
) -> CalendarSummary {
    let dates = &panel.dates;
    CalendarSummary {
        days: panel.len(),
        boundary: split.boundary,
        train_days: split.boundary,
        test_days: panel.len() - split.boundary,
        ensemble_days: ensemble_dates.len(),
        first_date: dates[0],
        last_date: *dates.last().expect("non-empty panel"),
        first_prediction_date: ensemble_dates.first().copied(),
        last_prediction_date: ensemble_dates.last().copied(),
    }
}

fn instrument_summaries(config: &PipelineConfig, panel: &AlignedPanel) -> Vec<InstrumentSummary> {
    config
        .instruments
        .iter()
        .map(|inst| InstrumentSummary {
            symbol: inst.symbol.clone(),
            source: if inst.csv.is_some() {
                "csv".to_string()
            } else {
                "synthetic".to_string()
            },
            days: panel.by_symbol(&inst.symbol).map_or(0, |s| s.len()),
        })
        .collect()
}

/// Serialized model document paired with its artifact filename.
pub fn model_artifacts(
    models: &[(MemberId, TrainedModel)],
    suffix: &str,
) -> Result<Vec<(String, String)>, CliError> {
    models
        .iter()
        .map(|(id, model)| {
            let body = model_to_json(model).map_err(|e| CliError::stage("emit", e))?;
            Ok((
                format!("model_{}_{}{suffix}.json", id.dataset, id.architecture.name()),
                body,
            ))
        })
        .collect()
}
