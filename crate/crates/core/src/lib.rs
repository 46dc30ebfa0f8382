//! Hybrid quantum-classical ensemble pipeline for daily directional prediction.
//!
//! The crate is organized along the pipeline's data flow:
//!
//! * [`data`] — OHLCV ingestion, calendar alignment, synthetic market data,
//!   temporal train/test splits.
//! * [`features`] — causal technical indicators, the 27-column feature matrix,
//!   directional labels, and the normalized inputs for the quantum circuit.
//! * [`qsentiment`] — a 4-qubit statevector simulator, the variational
//!   sentiment circuit, and parameter-shift pre-training.
//! * [`learners`] — five base architectures (logistic regression, random
//!   forest, gradient boosting, LSTM, decision transformer) trained from
//!   scratch with analytic gradients.
//! * [`ensemble`] — quality filtering and the aggregation strategies.
//! * [`evalstat`] — accuracy/precision/recall, McNemar's test, Wilson score
//!   intervals, regime partitioning, correlation analysis, ablation tables.
//! * [`backtest`] — consensus-gated trading simulation with costs, Sharpe
//!   ratio, and drawdown.
//!
//! Everything is deterministic under a fixed seed: data synthesis, weight
//! initialization, shuffling, dropout masks, and bootstrap draws all derive
//! from explicitly threaded RNGs.

pub mod backtest;
pub mod data;
pub mod ensemble;
pub mod evalstat;
pub mod features;
pub mod learners;
pub mod qsentiment;
