//! The release gate: eleven numbered end-to-end checks covering the
//! quantum simulator, every learner's gradients, ensemble and statistics
//! oracles, the desk's closed-form arithmetic, causality, the planted-
//! signal sanity run, determinism, and ablation integrity.
//!
//! Each check is one test that prints a single `[PASS] criterion N` line;
//! run `cargo test --test acceptance -- --nocapture` to see them all.

use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quantens_core::backtest::expected_daily_return;
use quantens_core::data::synth_ohlcv;
use quantens_core::ensemble::{
    run_strategy, smart_filter, EnsembleError, MemberId, MemberRecord, StrategyConfig,
    StrategyKind,
};
use quantens_core::evalstat::{chi2_sf_1df, mcnemar, percent, wilson_ci};
use quantens_core::features::{
    build_feature_matrix, quantum_inputs, Label, QuantumInput, N_FEATURES,
};
use quantens_core::learners::{
    logistic_loss_and_grad, model_to_json, Architecture, LogisticSpec, LstmModel, LstmSpec,
    Prediction, Standardizer, TransformerModel, TransformerSpec,
};
use quantens_core::qsentiment::{
    encode, mean_z, param_shift_gradient, run_circuit, sentiment, sentiment_series, CircuitParams,
    Statevector, N_PARAMS, N_QUBITS, STATE_DIM,
};

use quantens_cli::config::PipelineConfig;
use quantens_cli::pipeline::{execute, Scope};

// ---------------------------------------------------------------------------
// Criterion 1 — parameter-shift gradients vs finite differences
// ---------------------------------------------------------------------------

#[test]
fn c01_parameter_shift_matches_finite_differences() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let params = random_params(&mut rng);
        let x = random_input(&mut rng);
        let exact = param_shift_gradient(&params, &x);
        let mut p = params.clone();
        for j in 0..N_PARAMS {
            let orig = p.theta[j];
            p.theta[j] = orig + h;
            let plus = mean_z(&p, &x);
            p.theta[j] = orig - h;
            let minus = mean_z(&p, &x);
            p.theta[j] = orig;
            worst = worst.max((exact[j] - (plus - minus) / (2.0 * h)).abs());
        }
    }
    let elapsed = started.elapsed();
    assert!(worst < 1e-6, "max |shift − fd| = {worst:e}");
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "[PASS] criterion 1: parameter-shift gradients match central differences on 100 random \
         (θ, x); max |Δ| {worst:.2e} < 1e-6 in {:.2}s",
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 2 — statevector integrity against a dense matrix oracle
// ---------------------------------------------------------------------------

#[test]
fn c02_statevector_norm_and_dense_oracle() {
    // Norm preservation over ten thousand random gates.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut st = Statevector::zero_state();
    for _ in 0..10_000 {
        let q = rng.gen_range(0..N_QUBITS);
        let phi = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        match rng.gen_range(0..4) {
            0 => st.apply_rx(q, phi),
            1 => st.apply_ry(q, phi),
            2 => st.apply_rz(q, phi),
            _ => {
                let t = (q + rng.gen_range(1..N_QUBITS)) % N_QUBITS;
                st.apply_cnot(q, t).unwrap();
            }
        }
    }
    let drift = (st.norm_sq() - 1.0).abs();
    assert!(drift < 1e-10, "norm drift {drift:e}");

    // Full circuit vs an explicit 16×16 matrix product on 50 inputs.
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let params = random_params(&mut rng);
        let x = random_input(&mut rng);
        let fast = run_circuit(&params, &x);
        let dense = dense_circuit(&params, &x);
        for (a, b) in fast.amps.iter().zip(&dense) {
            worst = worst.max((a - b).norm());
        }
    }
    assert!(worst < 1e-12, "dense oracle mismatch {worst:e}");
    println!(
        "[PASS] criterion 2: norm drift {drift:.2e} over 10000 gates; run_circuit within \
         {worst:.2e} of the dense 16×16 matrix oracle on 50 inputs"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3 — closed-form sentiment values
// ---------------------------------------------------------------------------

#[test]
fn c03_closed_form_sentiment_values() {
    let zeros = CircuitParams::zeros();
    let x0 = QuantumInput { x: [0.0; 4] };
    let s0 = sentiment(&zeros, &x0).value;
    assert!(
        (s0 - 1.0f64.tanh()).abs() < 1e-12,
        "zero input gave {s0}, wanted tanh(1)"
    );

    // All-ones input: every qubit encodes to |1⟩, so the encoding layer
    // reads mean ⟨Z⟩ = −1 → tanh(−1).
    let x1 = QuantumInput { x: [1.0; 4] };
    let enc = encode(&x1);
    let enc_mean: f64 =
        (0..N_QUBITS).map(|q| enc.expect_z(q)).sum::<f64>() / N_QUBITS as f64;
    assert!(
        (enc_mean.tanh() - (-1.0f64).tanh()).abs() < 1e-12,
        "encoded all-ones gave tanh({enc_mean}), wanted tanh(−1)"
    );

    // The full zero-parameter circuit still applies the CNOT cascade,
    // which walks |1111⟩ to |0011⟩: two qubits up, two down, mean ⟨Z⟩ = 0.
    let s1 = sentiment(&zeros, &x1).value;
    assert!(s1.abs() < 1e-12, "full circuit at all-ones gave {s1}");
    let walked = run_circuit(&zeros, &x1);
    let idx_0011 = 0b0011;
    assert!((walked.amps[idx_0011].norm() - 1.0).abs() < 1e-12);

    println!(
        "[PASS] criterion 3: closed-form sentiment: tanh(1) at zero input; all-ones input reads \
         tanh(−1) at the encoding layer and exactly 0 after the CNOT cascade (|1111⟩ → |0011⟩), \
         all within 1e-12"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4 — learner gradient checks on the named toy sizes
// ---------------------------------------------------------------------------

#[test]
fn c04_learner_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    // Logistic regression, full precision.
    let spec = LogisticSpec::default();
    let d = 7;
    let (x, y) = random_rows(&mut rng, 20, d);
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let b = rng.gen_range(-0.5..0.5);
    let (_, gw, gb) = logistic_loss_and_grad(&w, b, &x, &y, spec.c);
    let h = 1e-6;
    let mut worst_logistic = 0.0f64;
    for j in 0..d {
        let mut wp = w.clone();
        wp[j] += h;
        let (lp, _, _) = logistic_loss_and_grad(&wp, b, &x, &y, spec.c);
        wp[j] = w[j] - h;
        let (lm, _, _) = logistic_loss_and_grad(&wp, b, &x, &y, spec.c);
        worst_logistic = worst_logistic.max(rel_err(gw[j], (lp - lm) / (2.0 * h)));
    }
    let (lp, _, _) = logistic_loss_and_grad(&w, b + h, &x, &y, spec.c);
    let (lm, _, _) = logistic_loss_and_grad(&w, b - h, &x, &y, spec.c);
    worst_logistic = worst_logistic.max(rel_err(gb, (lp - lm) / (2.0 * h)));
    assert!(worst_logistic < 1e-6, "logistic rel error {worst_logistic:e}");

    // One-layer, two-unit LSTM toy.
    let spec = LstmSpec {
        input_dim: 3,
        lookback: 4,
        layer_sizes: vec![2],
        dropout: 0.0,
        seed: 40,
        ..LstmSpec::default()
    };
    let width = spec.input_dim * spec.lookback;
    let mut lstm = LstmModel::new_random(spec, identity_standardizer(width));
    let (x, y) = random_rows(&mut rng, 6, width);
    let worst_lstm = gradcheck_flat(
        &x,
        &y,
        lstm.params_flat(),
        |p, x, y| {
            lstm.set_params_flat(p);
            lstm.loss_and_grads(x, y)
        },
    );
    assert!(worst_lstm < 1e-4, "lstm rel error {worst_lstm:e}");

    // One-block, two-head, width-8 transformer toy.
    let spec = TransformerSpec {
        input_dim: 3,
        lookback: 5,
        d_model: 8,
        n_heads: 2,
        n_blocks: 1,
        d_ff: 16,
        dropout: 0.0,
        seed: 41,
        ..TransformerSpec::default()
    };
    let width = spec.input_dim * spec.lookback;
    let mut dt = TransformerModel::new_random(spec, identity_standardizer(width));
    let (x, y) = random_rows(&mut rng, 5, width);
    let worst_dt = gradcheck_flat(
        &x,
        &y,
        dt.params_flat(),
        |p, x, y| {
            dt.set_params_flat(p);
            dt.loss_and_grads(x, y)
        },
    );
    assert!(worst_dt < 1e-4, "transformer rel error {worst_dt:e}");

    println!(
        "[PASS] criterion 4: gradient checks: logistic {worst_logistic:.2e} < 1e-6; \
         1-layer/2-unit LSTM {worst_lstm:.2e} and 1-block/2-head/width-8 transformer \
         {worst_dt:.2e} < 1e-4"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5 — ensemble equivalence with a brute-force evaluator
// ---------------------------------------------------------------------------

#[test]
fn c05_ensemble_matches_brute_force() {
    // Exhaustive: every sign pattern of 3 members over 2 days, every
    // strategy, filtered and naive.
    let mut checked = 0usize;
    let archs = [
        Architecture::Lstm,
        Architecture::GradientBoost,
        Architecture::Logistic,
    ];
    let accs = [0.61, 0.57, 0.50];
    for pattern in 0..64u32 {
        let members: Vec<MemberRecord> = (0..3)
            .map(|i| {
                let p_ups: Vec<f64> = (0..2)
                    .map(|d| if pattern >> (i * 2 + d) & 1 == 1 { 0.8 } else { 0.2 })
                    .collect();
                make_member("alpha", archs[i], accs[i], &p_ups)
            })
            .collect();
        for config in every_strategy(2, 1) {
            compare_with_slow(&config, &members, &[1, -1]);
            checked += 1;
        }
    }

    // Random: ten thousand draws over rosters ≤ 5 and ≤ 20 days.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let n_members = rng.gen_range(1..=5);
        let n_days = rng.gen_range(1..=20);
        let members: Vec<MemberRecord> = (0..n_members)
            .map(|i| {
                let arch = Architecture::ALL[rng.gen_range(0..Architecture::ALL.len())];
                let p_ups: Vec<f64> = (0..n_days).map(|_| rng.gen_range(0.0..=1.0)).collect();
                make_member(&format!("d{i}"), arch, rng.gen_range(0.45..0.70), &p_ups)
            })
            .collect();
        let labels: Vec<Label> = (0..n_days)
            .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
            .collect();
        let kind = match rng.gen_range(0..6) {
            0 => StrategyKind::TopK,
            1 => StrategyKind::ConfidenceWeighted,
            2 => StrategyKind::MajorityVote,
            3 => StrategyKind::AccuracyWeighted,
            4 => StrategyKind::DatasetSpecific(
                Architecture::ALL[rng.gen_range(0..Architecture::ALL.len())],
            ),
            _ => StrategyKind::AdaptiveDynamic,
        };
        let mut config = StrategyConfig::new(kind);
        config.k = rng.gen_range(1..=5);
        config.adaptive_window = rng.gen_range(1..=8);
        config.naive = rng.gen_bool(0.5);
        compare_with_slow(&config, &members, &labels);
        checked += 1;
    }
    println!(
        "[PASS] criterion 5: every strategy output matched the brute-force evaluator exactly on \
         {checked} cases (64 exhaustive sign patterns × 12 configs + 10000 random draws)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 6 — statistics oracles
// ---------------------------------------------------------------------------

#[test]
fn c06_statistics_oracles() {
    // McNemar (30, 15) → χ² = 15²/45 = 5 exactly.
    let mut a: Vec<Label> = Vec::new();
    let mut b: Vec<Label> = Vec::new();
    let mut y: Vec<Label> = Vec::new();
    for _ in 0..30 {
        a.push(-1);
        b.push(1);
        y.push(1);
    }
    for _ in 0..15 {
        a.push(1);
        b.push(-1);
        y.push(1);
    }
    let r = mcnemar(&a, &b, &y).unwrap();
    assert_eq!((r.n01, r.n10), (30, 15));
    assert_eq!(r.chi2, 5.0);

    // χ²₁ survival vs Simpson quadrature over [0, 50].
    let mut worst_chi = 0.0f64;
    for i in 0..=500 {
        let x = i as f64 * 0.1;
        worst_chi = worst_chi.max((chi2_sf_1df(x) - chi2_sf_quadrature(x)).abs());
    }
    assert!(worst_chi < 1e-9, "χ² oracle gap {worst_chi:e}");
    assert!((r.p - chi2_sf_quadrature(5.0)).abs() < 1e-9);

    // Wilson vs root-finding, boundaries included.
    let mut worst_wilson = 0.0f64;
    for (s, n) in [(0usize, 10usize), (10, 10), (1, 10), (172, 286), (5, 9), (50, 100)] {
        let (lf, uf) = wilson_ci(s, n, 0.95).unwrap();
        let (ls, us) = wilson_bisected(s, n, 0.95);
        worst_wilson = worst_wilson.max((lf - ls).abs().max((uf - us).abs()));
    }
    assert!(worst_wilson < 1e-9, "wilson oracle gap {worst_wilson:e}");
    let (zero_lower, _) = wilson_ci(0, 10, 0.95).unwrap();
    assert_eq!(zero_lower, 0.0);

    println!(
        "[PASS] criterion 6: McNemar(30,15) χ² = 5 exactly; χ²₁ p within {worst_chi:.2e} of \
         quadrature on [0,50]; Wilson within {worst_wilson:.2e} of root-finding, (0,10) lower \
         bound exactly 0"
    );
}

// ---------------------------------------------------------------------------
// Criterion 7 — desk arithmetic
// ---------------------------------------------------------------------------

#[test]
fn c07_desk_arithmetic() {
    // At 60.14% accuracy, a 0.04% mean daily move, and 2 bp round-trip
    // cost: (2·0.6014 − 1)·0.0004 − 0.0002 = −0.00011888, i.e. −0.0119%
    // per day — below breakeven despite the accuracy edge.
    let r = expected_daily_return(0.6014, 0.0004, 0.0002);
    assert!(
        (r - -0.00011888).abs() < 1e-9,
        "expected daily return {r}, wanted −0.00011888"
    );
    assert_eq!(format!("{:.4}%/day", 100.0 * r), "-0.0119%/day");

    // 172 of 286 renders as 60.14%.
    assert_eq!(percent(172.0 / 286.0), "60.14%");

    // The 35-member desk roster: exactly 9 above the 52% filter, exactly
    // 3 above 55%.
    let roster = desk_roster();
    assert_eq!(roster.len(), 35);
    assert_eq!(smart_filter(&roster, 0.52).len(), 9);
    assert_eq!(smart_filter(&roster, 0.55).len(), 3);

    println!(
        "[PASS] criterion 7: expected_daily_return(0.6014, 0.0004, 0.0002) = {r:.8} \
         (−0.0119%/day); 172/286 renders 60.14%; desk roster keeps 9 members above 0.52 and 3 \
         above 0.55"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8 — no look-ahead, end to end
// ---------------------------------------------------------------------------

#[test]
fn c08_no_look_ahead_under_truncation() {
    let config = PipelineConfig::from_json(
        &serde_json::json!({
            "seed": 81,
            "instruments": [{
                "symbol": "SYN",
                "synthetic": { "days": 220, "signal_strength": 0.5,
                               "segments": [{ "length": 220, "drift": 0.0004, "volatility": 0.015 }] }
            }],
            "quantum": { "epochs": 25 },
            "ensemble": { "strategies": ["naive_majority_vote"] }
        })
        .to_string(),
    )
    .unwrap();
    let outcome = execute(&config, 2, Scope::Full).unwrap();

    // Rebuild the exact data path: same synthetic seed, frozen circuit.
    let spec = config.instruments[0].synthetic.as_ref().unwrap();
    let seed = quantens_cli::pipeline::derive_seed(config.seed, "SYN", "synth");
    let series = synth_ohlcv("SYN", spec.days, &spec.plan(), spec.signal_strength, seed).unwrap();
    let split = quantens_core::data::temporal_split(series.len(), config.train_fraction).unwrap();
    let params = outcome.quantum_docs[0].1.params().unwrap();

    let full_matrix = {
        let inputs = quantum_inputs(&series, split.boundary).unwrap();
        let s = sentiment_series(&params, &inputs);
        build_feature_matrix(&series, Some(&s)).unwrap()
    };

    // 20 random test days on the shared prediction axis.
    let lmax = 10;
    let first_target = split.boundary + lmax - 1;
    let mut days: Vec<usize> = (first_target..series.len() - 1).collect();
    days.shuffle(&mut ChaCha8Rng::seed_from_u64(808));
    days.truncate(20);

    let mut compared = 0usize;
    for &t in &days {
        // Truncate every input past day t and recompute from scratch.
        let cut = quantens_core::data::OhlcvSeries::new("SYN", series.bars[..=t].to_vec()).unwrap();
        let cut_matrix = {
            let inputs = quantum_inputs(&cut, split.boundary).unwrap();
            let s = sentiment_series(&params, &inputs);
            build_feature_matrix(&cut, Some(&s)).unwrap()
        };
        for (id, model) in &outcome.models {
            let lb = id.architecture.lookback();
            let full_pred = model.predict(&flat_window(&full_matrix.x, t, lb)).unwrap();
            let cut_pred = model.predict(&flat_window(&cut_matrix.x, t, lb)).unwrap();
            assert_eq!(
                full_pred.p_up.to_bits(),
                cut_pred.p_up.to_bits(),
                "{id} day {t}: {} with future data vs {} without",
                full_pred.p_up,
                cut_pred.p_up
            );
            compared += 1;
        }
    }
    println!(
        "[PASS] criterion 8: predictions identical to the last bit after truncating all data \
         beyond the prediction day ({compared} model-day pairs over 20 random test days)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 9 — planted-signal sanity run
// ---------------------------------------------------------------------------

#[test]
fn c09_planted_signal_sanity() {
    let config = PipelineConfig::from_json(
        &serde_json::json!({
            "seed": 7,
            "instruments": [{
                "symbol": "SYN",
                "synthetic": { "days": 600, "signal_strength": 0.65,
                               "segments": [{ "length": 600, "drift": 0.0003, "volatility": 0.012 }] }
            }]
        })
        .to_string(),
    )
    .unwrap();
    let started = Instant::now();
    let outcome = execute(&config, 4, Scope::Full).unwrap();
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 600.0,
        "full run took {elapsed:?}, budget is 10 minutes"
    );

    let members = &outcome.report.evaluation.members;
    assert_eq!(members.len(), 5);
    let above_55 = members.iter().filter(|m| m.accuracy > 0.55).count();
    assert!(
        above_55 >= 3,
        "only {above_55}/5 architectures beat 55%: {:?}",
        members
            .iter()
            .map(|m| (m.architecture.as_str(), m.accuracy))
            .collect::<Vec<_>>()
    );

    // Filtered Top-K accuracy ≥ the roster's median member accuracy.
    let top = outcome
        .report
        .evaluation
        .strategies
        .iter()
        .find(|s| s.strategy.starts_with("top_"))
        .expect("top-k strategy present");
    let roster = &outcome
        .ensemble_outputs
        .iter()
        .find(|o| o.strategy == top.strategy)
        .expect("matching ensemble output")
        .roster;
    let mut roster_accs: Vec<f64> = roster
        .iter()
        .map(|id| {
            members
                .iter()
                .find(|m| m.member == id.to_string())
                .expect("roster member evaluated")
                .accuracy
        })
        .collect();
    roster_accs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if roster_accs.len() % 2 == 1 {
        roster_accs[roster_accs.len() / 2]
    } else {
        0.5 * (roster_accs[roster_accs.len() / 2 - 1] + roster_accs[roster_accs.len() / 2])
    };
    assert!(
        top.accuracy >= median,
        "{} accuracy {:.4} below roster median {median:.4}",
        top.strategy,
        top.accuracy
    );

    println!(
        "[PASS] criterion 9: planted signal recovered: {above_55}/5 architectures above 55% \
         (best {:.2}%), {} at {:.2}% ≥ roster median {:.2}%, full run in {:.1}s on 4 threads",
        100.0 * members.iter().map(|m| m.accuracy).fold(0.0, f64::max),
        top.strategy,
        100.0 * top.accuracy,
        100.0 * median,
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 10 — byte-identical reports across invocations
// ---------------------------------------------------------------------------

#[test]
fn c10_run_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.json");
    std::fs::write(
        &config_path,
        serde_json::json!({
            "seed": 10,
            "instruments": [{
                "symbol": "SYN",
                "synthetic": { "days": 160, "signal_strength": 0.55,
                               "segments": [{ "length": 160, "drift": 0.0005, "volatility": 0.014 }] }
            }],
            "architectures": ["logistic", "gradient_boost", "random_forest"],
            "quantum": { "epochs": 20 },
            "ensemble": { "strategies": ["naive_top_k", "naive_majority_vote", "naive_adaptive_dynamic"] }
        })
        .to_string(),
    )
    .unwrap();

    let run = |out: &std::path::Path| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_quantens"))
            .args(["run", "--config"])
            .arg(&config_path)
            .args(["--jobs", "2", "--out"])
            .arg(out)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "run failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        std::fs::read(out.join("report.json")).unwrap()
    };
    let first = run(&dir.path().join("a"));
    let second = run(&dir.path().join("b"));
    assert_eq!(first, second, "report.json differs between identical runs");

    println!(
        "[PASS] criterion 10: two `run` invocations with the same config and seed wrote \
         byte-identical report.json ({} bytes)",
        first.len()
    );
}

// ---------------------------------------------------------------------------
// Criterion 11 — ablation integrity
// ---------------------------------------------------------------------------

#[test]
fn c11_ablation_integrity() {
    let base = serde_json::json!({
        "seed": 11,
        "instruments": [{
            "symbol": "SYN",
            "synthetic": { "days": 170, "signal_strength": 0.55,
                           "segments": [{ "length": 170, "drift": 0.0004, "volatility": 0.013 }] }
        }],
        "architectures": ["logistic", "gradient_boost", "random_forest"],
        "quantum": { "epochs": 20 },
        "ensemble": { "strategies": ["naive_majority_vote"] }
    });
    let mut off = base.clone();
    off["quantum"]["enabled"] = serde_json::json!(false);
    let config_off = PipelineConfig::from_json(&off.to_string()).unwrap();
    let config_ablate = PipelineConfig::from_json(&base.to_string()).unwrap();

    let run_off = execute(&config_off, 2, Scope::Full).unwrap();
    let run_ablate = execute(&config_ablate, 2, Scope::Ablate).unwrap();

    // The quantum-off models must be byte-identical to the ablation twins
    // that never saw sentiment columns.
    assert_eq!(run_off.models.len(), run_ablate.models_noq.len());
    for ((id_a, model_a), (id_b, model_b)) in run_off.models.iter().zip(&run_ablate.models_noq) {
        assert_eq!(id_a, id_b);
        let doc_a = model_to_json(model_a).unwrap();
        let doc_b = model_to_json(model_b).unwrap();
        assert_eq!(doc_a, doc_b, "{id_a}: quantum-off and ablation twin diverge");
    }

    // Never-computed columns == computed-then-zeroed columns, bit for bit.
    let spec = config_ablate.instruments[0].synthetic.as_ref().unwrap();
    let seed = quantens_cli::pipeline::derive_seed(config_ablate.seed, "SYN", "synth");
    let series = synth_ohlcv("SYN", spec.days, &spec.plan(), spec.signal_strength, seed).unwrap();
    let split =
        quantens_core::data::temporal_split(series.len(), config_ablate.train_fraction).unwrap();
    let params = run_ablate.quantum_docs[0].1.params().unwrap();
    let inputs = quantum_inputs(&series, split.boundary).unwrap();
    let scored = sentiment_series(&params, &inputs);
    let mut zeroed = build_feature_matrix(&series, Some(&scored)).unwrap();
    for row in &mut zeroed.x {
        row[25] = 0.0;
        row[26] = 0.0;
    }
    let never = build_feature_matrix(&series, None).unwrap();
    assert_eq!(zeroed.len(), never.len());
    for t in 0..never.len() {
        for c in 0..N_FEATURES {
            let (a, b) = (zeroed.x[t][c], never.x[t][c]);
            assert!(
                a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()),
                "day {t} column {c}: zeroed {a} vs never-computed {b}"
            );
        }
    }

    // Paired ablation rows: one per model, each with a delta and a
    // McNemar p-value.
    let rows = &run_ablate.report.evaluation.ablation;
    assert_eq!(rows.len(), run_ablate.models.len());
    for row in rows {
        assert!((row.gain - (row.acc_with - row.acc_without)).abs() < 1e-15);
        assert!(row.mcnemar.p.is_finite() && (0.0..=1.0).contains(&row.mcnemar.p));
    }

    println!(
        "[PASS] criterion 11: quantum-off run bit-identical to never-computed columns ({} model \
         documents byte-equal, {}×{} feature cells bit-equal); ablation report carries {} paired \
         rows with deltas and McNemar p",
        run_off.models.len(),
        never.len(),
        N_FEATURES,
        rows.len()
    );
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn random_params(rng: &mut ChaCha8Rng) -> CircuitParams {
    let mut p = CircuitParams::zeros();
    for t in p.theta.iter_mut() {
        *t = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    }
    p
}

fn random_input(rng: &mut ChaCha8Rng) -> QuantumInput {
    QuantumInput {
        x: [rng.gen(), rng.gen(), rng.gen(), rng.gen()],
    }
}

type Gate2 = [[Complex64; 2]; 2];

fn lift_single(gate: &Gate2, qubit: usize) -> Vec<Vec<Complex64>> {
    let zero = Complex64::new(0.0, 0.0);
    let mut full = vec![vec![zero; STATE_DIM]; STATE_DIM];
    for i in 0..STATE_DIM {
        for j in 0..STATE_DIM {
            if (i & !(1 << qubit)) == (j & !(1 << qubit)) {
                full[i][j] = gate[(i >> qubit) & 1][(j >> qubit) & 1];
            }
        }
    }
    full
}

fn cnot_permutation(control: usize, target: usize) -> Vec<Vec<Complex64>> {
    let zero = Complex64::new(0.0, 0.0);
    let mut full = vec![vec![zero; STATE_DIM]; STATE_DIM];
    for j in 0..STATE_DIM {
        full[j ^ (((j >> control) & 1) << target)][j] = Complex64::new(1.0, 0.0);
    }
    full
}

fn matvec(m: &[Vec<Complex64>], v: &[Complex64]) -> Vec<Complex64> {
    (0..STATE_DIM)
        .map(|i| (0..STATE_DIM).map(|j| m[i][j] * v[j]).sum())
        .collect()
}

/// The whole circuit as an explicit matrix product, rebuilt from the gate
/// definitions rather than the simulator's update rules.
fn dense_circuit(params: &CircuitParams, x: &QuantumInput) -> Vec<Complex64> {
    let rx = |phi: f64| -> Gate2 {
        let (s, c) = (phi / 2.0).sin_cos();
        [
            [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
            [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
        ]
    };
    let ry = |phi: f64| -> Gate2 {
        let (s, c) = (phi / 2.0).sin_cos();
        [
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ]
    };
    let rz = |phi: f64| -> Gate2 {
        [
            [Complex64::from_polar(1.0, -phi / 2.0), Complex64::new(0.0, 0.0)],
            [Complex64::new(0.0, 0.0), Complex64::from_polar(1.0, phi / 2.0)],
        ]
    };
    let mut v = vec![Complex64::new(0.0, 0.0); STATE_DIM];
    v[0] = Complex64::new(1.0, 0.0);
    for (q, &xi) in x.x.iter().enumerate() {
        v = matvec(&lift_single(&ry(std::f64::consts::PI * xi), q), &v);
    }
    for layer in 0..2 {
        for q in 0..N_QUBITS {
            v = matvec(&lift_single(&rx(params.get(layer, q, 0)), q), &v);
            v = matvec(&lift_single(&ry(params.get(layer, q, 1)), q), &v);
            v = matvec(&lift_single(&rz(params.get(layer, q, 2)), q), &v);
        }
        for q in 0..N_QUBITS {
            v = matvec(&cnot_permutation(q, (q + 1) % N_QUBITS), &v);
        }
    }
    v
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, width: usize) -> (Vec<Vec<f64>>, Vec<Label>) {
    let x = (0..n)
        .map(|_| (0..width).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect();
    let y = (0..n)
        .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
        .collect();
    (x, y)
}

fn identity_standardizer(width: usize) -> Standardizer {
    Standardizer::fit(&[vec![0.0; width], vec![1.0; width], vec![-1.0; width]])
}

/// Worst relative error between an analytic gradient and central
/// differences for any flat-parameterized loss.
fn gradcheck_flat(
    x: &[Vec<f64>],
    y: &[Label],
    base: Vec<f64>,
    mut loss_and_grads: impl FnMut(&[f64], &[Vec<f64>], &[Label]) -> (f64, Vec<f64>),
) -> f64 {
    let (_, grads) = loss_and_grads(&base, x, y);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut p = base.clone();
    for j in 0..base.len() {
        p[j] = base[j] + h;
        let (lp, _) = loss_and_grads(&p, x, y);
        p[j] = base[j] - h;
        let (lm, _) = loss_and_grads(&p, x, y);
        p[j] = base[j];
        worst = worst.max(rel_err(grads[j], (lp - lm) / (2.0 * h)));
    }
    worst
}

fn make_member(dataset: &str, arch: Architecture, accuracy: f64, p_ups: &[f64]) -> MemberRecord {
    MemberRecord {
        id: MemberId::new(dataset, arch),
        accuracy,
        predictions: p_ups.iter().map(|&p| Prediction::from_p_up(p)).collect(),
    }
}

fn every_strategy(k: usize, window: usize) -> Vec<StrategyConfig> {
    let mut configs = Vec::new();
    for kind in [
        StrategyKind::TopK,
        StrategyKind::ConfidenceWeighted,
        StrategyKind::MajorityVote,
        StrategyKind::AccuracyWeighted,
        StrategyKind::DatasetSpecific(Architecture::Lstm),
        StrategyKind::AdaptiveDynamic,
    ] {
        for naive in [false, true] {
            let mut c = StrategyConfig::new(kind);
            c.k = k;
            c.adaptive_window = window;
            c.naive = naive;
            configs.push(c);
        }
    }
    configs
}

/// Selection and aggregation rebuilt from first principles; `None` marks
/// configurations where the library is expected to refuse.
fn slow_strategy(
    config: &StrategyConfig,
    members: &[MemberRecord],
    labels: &[Label],
) -> Option<Vec<(Label, f64, usize)>> {
    let mut roster: Vec<&MemberRecord> = Vec::new();
    match config.kind {
        StrategyKind::DatasetSpecific(arch) => {
            roster.extend(members.iter().filter(|m| m.id.architecture == arch));
        }
        _ => {
            roster.extend(
                members
                    .iter()
                    .filter(|m| config.naive || m.accuracy > config.filter_threshold),
            );
        }
    }
    if matches!(config.kind, StrategyKind::TopK) {
        if config.k > roster.len() {
            return None;
        }
        let mut picked = Vec::new();
        while picked.len() < config.k {
            let mut best = 0usize;
            for (i, m) in roster.iter().enumerate() {
                if m.accuracy > roster[best].accuracy
                    || (m.accuracy == roster[best].accuracy && m.id < roster[best].id)
                {
                    best = i;
                }
            }
            picked.push(roster.remove(best));
        }
        roster = picked;
    }
    if roster.is_empty() {
        return None;
    }
    let n_days = roster[0].predictions.len();
    let mut votes = Vec::with_capacity(n_days);
    for d in 0..n_days {
        let mut score = 0.0;
        for m in &roster {
            let w = match config.kind {
                StrategyKind::TopK
                | StrategyKind::MajorityVote
                | StrategyKind::DatasetSpecific(_) => 1.0,
                StrategyKind::AccuracyWeighted => m.accuracy,
                StrategyKind::ConfidenceWeighted => m.accuracy * m.predictions[d].confidence,
                StrategyKind::AdaptiveDynamic => {
                    if d < config.adaptive_window {
                        m.accuracy
                    } else {
                        let hits = (d - config.adaptive_window..d)
                            .filter(|&t| m.predictions[t].label == labels[t])
                            .count();
                        hits as f64 / config.adaptive_window as f64
                    }
                }
            };
            score += w * m.predictions[d].label as f64;
        }
        let label: Label = if score >= 0.0 { 1 } else { -1 };
        let agree = roster
            .iter()
            .filter(|m| m.predictions[d].label == label)
            .count();
        votes.push((label, score, agree));
    }
    Some(votes)
}

fn compare_with_slow(config: &StrategyConfig, members: &[MemberRecord], labels: &[Label]) {
    match (run_strategy(config, members, labels), slow_strategy(config, members, labels)) {
        (Ok(out), Some(votes)) => {
            assert_eq!(out.days.len(), votes.len());
            for (got, (label, score, agree)) in out.days.iter().zip(&votes) {
                assert_eq!(got.label, *label, "{}", out.strategy);
                assert_eq!(got.score, *score, "{}", out.strategy);
                assert_eq!(got.agree_count, *agree, "{}", out.strategy);
            }
        }
        (Err(EnsembleError::NoQualifyingMembers | EnsembleError::KTooLarge { .. }), None) => {}
        (fast, slow) => panic!("divergence: {fast:?} vs slow {slow:?}"),
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// P(χ²₁ > x) via t = u²: √(2/π) ∫_{√x}^∞ e^{−u²/2} du.
fn chi2_sf_quadrature(x: f64) -> f64 {
    let lo = x.sqrt();
    if lo >= 9.0 {
        return 0.0;
    }
    (2.0 / std::f64::consts::PI).sqrt() * simpson(|u| (-u * u / 2.0).exp(), lo, 9.0, 20_000)
}

/// Standard normal survival function from the same quadrature.
fn normal_sf_quadrature(z: f64) -> f64 {
    0.5 * chi2_sf_quadrature(z * z)
}

/// Wilson endpoints as bisected roots of (p̂ − q)² = z²·q(1−q)/n, with z
/// itself bisected from the quadrature-based normal tail.
fn wilson_bisected(successes: usize, n: usize, confidence: f64) -> (f64, f64) {
    let half_alpha = 0.5 * (1.0 - confidence);
    let (mut zlo, mut zhi) = (0.0f64, 10.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (zlo + zhi);
        if normal_sf_quadrature(mid) > half_alpha {
            zlo = mid;
        } else {
            zhi = mid;
        }
    }
    let z = 0.5 * (zlo + zhi);

    let nf = n as f64;
    let p = successes as f64 / nf;
    let g = |q: f64| (p - q) * (p - q) - z * z * q * (1.0 - q) / nf;
    let bisect = |mut lo: f64, mut hi: f64| {
        let mut glo = g(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm.signum() == glo.signum() {
                lo = mid;
                glo = gm;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let lower = if successes == 0 {
        0.0
    } else {
        bisect(1e-300, if successes == n { 1.0 - 1e-9 } else { p })
    };
    let upper = if successes == n {
        1.0
    } else {
        bisect(if successes == 0 { 1e-12 } else { p }, 1.0 - 1e-16)
    };
    (lower, upper)
}

/// The 35-member roster shape: 9 strong members above 0.52 (3 above
/// 0.55), 17 in (0.50, 0.52], 9 at or below 0.50.
fn desk_roster() -> Vec<MemberRecord> {
    let strong = [
        0.5704, 0.5699, 0.5507, 0.5439, 0.5385, 0.5372, 0.5326, 0.5292, 0.5223,
    ];
    let mut members = Vec::new();
    for (i, &a) in strong.iter().enumerate() {
        members.push(make_member(&format!("m{i:02}"), Architecture::Lstm, a, &[0.8]));
    }
    for i in 0..17 {
        members.push(make_member(
            &format!("m{:02}", 9 + i),
            Architecture::Logistic,
            0.505 + 0.0008 * i as f64,
            &[0.8],
        ));
    }
    for i in 0..9 {
        members.push(make_member(
            &format!("m{:02}", 26 + i),
            Architecture::RandomForest,
            0.44 + 0.006 * i as f64,
            &[0.8],
        ));
    }
    members
}

fn flat_window(rows: &[[f64; N_FEATURES]], target: usize, lookback: usize) -> Vec<f64> {
    let mut flat = Vec::with_capacity(lookback * N_FEATURES);
    for day in target + 1 - lookback..=target {
        flat.extend_from_slice(&rows[day]);
    }
    flat
}
