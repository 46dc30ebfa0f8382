//! 4-qubit statevector simulation of the variational sentiment circuit, plus
//! parameter-shift pre-training of its 24 angles.
//!
//! Basis states are indexed with qubit 0 as the least-significant bit, so
//! `amps[0b0101]` is the amplitude of (q3,q2,q1,q0) = (0,1,0,1). All
//! rotations use the convention `R_A(phi) = exp(-i phi A / 2)`.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::QuantumInput;

pub const N_QUBITS: usize = 4;
pub const STATE_DIM: usize = 1 << N_QUBITS;
pub const N_LAYERS: usize = 2;
pub const ANGLES_PER_QUBIT: usize = 3;
pub const N_PARAMS: usize = N_LAYERS * N_QUBITS * ANGLES_PER_QUBIT;

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error("cnot control and target must differ (both {0})")]
    CnotSameQubit(usize),
    #[error("pretraining dataset is empty")]
    EmptyDataset,
    #[error("learn rate must be positive and finite, got {0}")]
    BadLearnRate(f64),
    #[error("circuit parameter document: {0}")]
    BadDocument(String),
    #[error("circuit parameter json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Full complex state of the 4-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    pub amps: [Complex64; STATE_DIM],
}

impl Statevector {
    /// |0000⟩.
    pub fn zero_state() -> Self {
        let mut amps = [Complex64::new(0.0, 0.0); STATE_DIM];
        amps[0] = Complex64::new(1.0, 0.0);
        Self { amps }
    }

    /// A computational basis state; `bits` is the basis index.
    pub fn basis_state(bits: usize) -> Self {
        assert!(bits < STATE_DIM, "basis index {bits} out of range");
        let mut amps = [Complex64::new(0.0, 0.0); STATE_DIM];
        amps[bits] = Complex64::new(1.0, 0.0);
        Self { amps }
    }

    pub fn norm_sq(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Applies an arbitrary single-qubit matrix to `qubit`.
    pub fn apply_single(&mut self, qubit: usize, m: &[[Complex64; 2]; 2]) {
        assert!(qubit < N_QUBITS, "qubit index {qubit} out of range");
        let bit = 1usize << qubit;
        for base in 0..STATE_DIM {
            if base & bit == 0 {
                let a0 = self.amps[base];
                let a1 = self.amps[base | bit];
                self.amps[base] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[base | bit] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    pub fn apply_rx(&mut self, qubit: usize, phi: f64) {
        self.apply_single(qubit, &rx_matrix(phi));
    }

    pub fn apply_ry(&mut self, qubit: usize, phi: f64) {
        self.apply_single(qubit, &ry_matrix(phi));
    }

    pub fn apply_rz(&mut self, qubit: usize, phi: f64) {
        self.apply_single(qubit, &rz_matrix(phi));
    }

    /// CNOT: flips `target` on basis states where `control` is 1.
    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<(), QuantumError> {
        assert!(control < N_QUBITS, "control index {control} out of range");
        assert!(target < N_QUBITS, "target index {target} out of range");
        if control == target {
            return Err(QuantumError::CnotSameQubit(control));
        }
        let cbit = 1usize << control;
        let tbit = 1usize << target;
        for base in 0..STATE_DIM {
            if base & cbit != 0 && base & tbit == 0 {
                self.amps.swap(base, base | tbit);
            }
        }
        Ok(())
    }

    /// ⟨Z⟩ of one qubit: P(bit = 0) − P(bit = 1).
    pub fn expect_z(&self, qubit: usize) -> f64 {
        assert!(qubit < N_QUBITS, "qubit index {qubit} out of range");
        let bit = 1usize << qubit;
        let mut acc = 0.0;
        for (base, a) in self.amps.iter().enumerate() {
            let sign = if base & bit == 0 { 1.0 } else { -1.0 };
            acc += sign * a.norm_sqr();
        }
        acc
    }
}

pub fn rx_matrix(phi: f64) -> [[Complex64; 2]; 2] {
    let (s, c) = (phi / 2.0).sin_cos();
    let mis = Complex64::new(0.0, -s);
    [
        [Complex64::new(c, 0.0), mis],
        [mis, Complex64::new(c, 0.0)],
    ]
}

pub fn ry_matrix(phi: f64) -> [[Complex64; 2]; 2] {
    let (s, c) = (phi / 2.0).sin_cos();
    [
        [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
        [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
    ]
}

pub fn rz_matrix(phi: f64) -> [[Complex64; 2]; 2] {
    let zero = Complex64::new(0.0, 0.0);
    [
        [Complex64::from_polar(1.0, -phi / 2.0), zero],
        [zero, Complex64::from_polar(1.0, phi / 2.0)],
    ]
}

/// The 24 variational angles: 2 layers × 4 qubits × 3 angles in (RX, RY, RZ)
/// order, stored flat as `layer*12 + qubit*3 + angle`. Angles are kept
/// unwrapped — no modular reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitParams {
    pub theta: [f64; N_PARAMS],
}

impl CircuitParams {
    pub fn zeros() -> Self {
        Self {
            theta: [0.0; N_PARAMS],
        }
    }

    pub fn flat_index(layer: usize, qubit: usize, angle: usize) -> usize {
        debug_assert!(layer < N_LAYERS && qubit < N_QUBITS && angle < ANGLES_PER_QUBIT);
        layer * N_QUBITS * ANGLES_PER_QUBIT + qubit * ANGLES_PER_QUBIT + angle
    }

    pub fn get(&self, layer: usize, qubit: usize, angle: usize) -> f64 {
        self.theta[Self::flat_index(layer, qubit, angle)]
    }

    /// Near-zero start: every angle uniform in (−0.01, 0.01). Small enough
    /// to avoid symmetric stationary points without washing out gradients.
    pub fn small_random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = [0.0; N_PARAMS];
        for t in theta.iter_mut() {
            *t = -0.01 + 0.02 * rng.gen::<f64>();
        }
        Self { theta }
    }
}

/// Encoding stage: RY(π·x_i) on qubit i applied to |0000⟩.
pub fn encode(x: &QuantumInput) -> Statevector {
    let mut st = Statevector::zero_state();
    for (q, &xi) in x.x.iter().enumerate() {
        debug_assert!((0.0..=1.0).contains(&xi), "encoded input out of [0,1]");
        st.apply_ry(q, std::f64::consts::PI * xi);
    }
    st
}

/// Full circuit: encoding, then per layer the RX/RY/RZ triple on every qubit
/// followed by the circular CNOT ring 0→1, 1→2, 2→3, 3→0.
pub fn run_circuit(params: &CircuitParams, x: &QuantumInput) -> Statevector {
    let mut st = encode(x);
    for layer in 0..N_LAYERS {
        for q in 0..N_QUBITS {
            st.apply_rx(q, params.get(layer, q, 0));
            st.apply_ry(q, params.get(layer, q, 1));
            st.apply_rz(q, params.get(layer, q, 2));
        }
        for q in 0..N_QUBITS {
            st.apply_cnot(q, (q + 1) % N_QUBITS)
                .expect("ring qubits are distinct");
        }
    }
    st
}

/// Per-qubit Pauli-Z expectations.
pub fn z_expectations(state: &Statevector) -> [f64; N_QUBITS] {
    [
        state.expect_z(0),
        state.expect_z(1),
        state.expect_z(2),
        state.expect_z(3),
    ]
}

/// Mean of the four ⟨Z⟩ after the full circuit — the pre-tanh readout.
pub fn mean_z(params: &CircuitParams, x: &QuantumInput) -> f64 {
    let z = z_expectations(&run_circuit(params, x));
    z.iter().sum::<f64>() / N_QUBITS as f64
}

/// Sentiment in (−1, 1): tanh of the mean ⟨Z⟩.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentScore {
    pub value: f64,
}

pub fn sentiment(params: &CircuitParams, x: &QuantumInput) -> SentimentScore {
    SentimentScore {
        value: mean_z(params, x).tanh(),
    }
}

/// Scores a whole day-indexed input series with frozen parameters; days
/// without inputs read NaN. Each day is evaluated exactly once — the score
/// depends only on (params, that day's inputs), so callers may cache freely.
pub fn sentiment_series(params: &CircuitParams, inputs: &[Option<QuantumInput>]) -> Vec<f64> {
    inputs
        .iter()
        .map(|qi| match qi {
            Some(x) => sentiment(params, x).value,
            None => f64::NAN,
        })
        .collect()
}

/// Exact gradient of `mean_z` w.r.t. every angle via the parameter-shift
/// rule: grad_j = [m(θ_j + π/2) − m(θ_j − π/2)] / 2.
pub fn param_shift_gradient(params: &CircuitParams, x: &QuantumInput) -> [f64; N_PARAMS] {
    let mut grad = [0.0; N_PARAMS];
    let mut shifted = params.clone();
    for j in 0..N_PARAMS {
        let orig = shifted.theta[j];
        shifted.theta[j] = orig + std::f64::consts::FRAC_PI_2;
        let plus = mean_z(&shifted, x);
        shifted.theta[j] = orig - std::f64::consts::FRAC_PI_2;
        let minus = mean_z(&shifted, x);
        shifted.theta[j] = orig;
        grad[j] = (plus - minus) / 2.0;
    }
    grad
}

/// Result of pre-training: the frozen parameters plus the loss trajectory
/// (`loss_history[k]` = MSE after `k` updates, so index 0 is the initial
/// loss).
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub params: CircuitParams,
    pub loss_history: Vec<f64>,
}

impl PretrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.loss_history[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("non-empty history")
    }
}

/// Full-batch gradient descent of the MSE between `sentiment` and explicit
/// targets in (−1, 1). The gradient chains the parameter-shift rule through
/// the tanh readout.
pub fn pretrain_to_targets(
    params0: &CircuitParams,
    dataset: &[(QuantumInput, f64)],
    epochs: usize,
    learn_rate: f64,
) -> Result<PretrainOutcome, QuantumError> {
    if dataset.is_empty() {
        return Err(QuantumError::EmptyDataset);
    }
    if !learn_rate.is_finite() || learn_rate <= 0.0 {
        return Err(QuantumError::BadLearnRate(learn_rate));
    }
    let n = dataset.len() as f64;
    let mut params = params0.clone();
    let mut history = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        let mut loss = 0.0;
        let mut grad = [0.0; N_PARAMS];
        for (x, target) in dataset {
            let s = mean_z(&params, x).tanh();
            let e = s - target;
            loss += e * e / n;
            let shift = param_shift_gradient(&params, x);
            let scale = 2.0 * e * (1.0 - s * s) / n;
            for j in 0..N_PARAMS {
                grad[j] += scale * shift[j];
            }
        }
        history.push(loss);
        for j in 0..N_PARAMS {
            params.theta[j] -= learn_rate * grad[j];
        }
    }
    let final_loss = dataset
        .iter()
        .map(|(x, target)| {
            let e = mean_z(&params, x).tanh() - target;
            e * e / n
        })
        .sum();
    history.push(final_loss);
    Ok(PretrainOutcome {
        params,
        loss_history: history,
    })
}

/// Supervised pre-training against next-day returns: each return is scaled
/// by the dataset's population standard deviation (floored at 1e-12) and
/// squashed through tanh to give a target in (−1, 1). The dataset must come
/// from the training segment only; the returned parameters are frozen
/// afterwards.
pub fn pretrain(
    params0: &CircuitParams,
    dataset: &[(QuantumInput, f64)],
    epochs: usize,
    learn_rate: f64,
) -> Result<PretrainOutcome, QuantumError> {
    if dataset.is_empty() {
        return Err(QuantumError::EmptyDataset);
    }
    let n = dataset.len() as f64;
    let mean = dataset.iter().map(|(_, r)| r).sum::<f64>() / n;
    let var = dataset.iter().map(|(_, r)| (r - mean).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt().max(1e-12);
    let targets: Vec<(QuantumInput, f64)> = dataset
        .iter()
        .map(|(x, r)| (*x, (r / sigma).tanh()))
        .collect();
    pretrain_to_targets(params0, &targets, epochs, learn_rate)
}

/// On-disk form of trained circuit parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitParamsDoc {
    pub version: u32,
    pub layers: usize,
    pub qubits: usize,
    pub theta: Vec<f64>,
    pub seed: u64,
    pub training_meta: Option<PretrainMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainMeta {
    pub epochs: usize,
    pub learn_rate: f64,
    pub samples: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl CircuitParamsDoc {
    pub fn new(params: &CircuitParams, seed: u64, training_meta: Option<PretrainMeta>) -> Self {
        Self {
            version: 1,
            layers: N_LAYERS,
            qubits: N_QUBITS,
            theta: params.theta.to_vec(),
            seed,
            training_meta,
        }
    }

    pub fn params(&self) -> Result<CircuitParams, QuantumError> {
        if self.layers != N_LAYERS || self.qubits != N_QUBITS {
            return Err(QuantumError::BadDocument(format!(
                "expected {N_LAYERS} layers x {N_QUBITS} qubits, got {} x {}",
                self.layers, self.qubits
            )));
        }
        let theta: [f64; N_PARAMS] = self
            .theta
            .as_slice()
            .try_into()
            .map_err(|_| {
                QuantumError::BadDocument(format!(
                    "expected {N_PARAMS} angles, got {}",
                    self.theta.len()
                ))
            })?;
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(QuantumError::BadDocument("non-finite angle".into()));
        }
        Ok(CircuitParams { theta })
    }
}

// 17 significant decimal digits round-trips every finite f64 exactly.
struct Sig17Formatter;

impl serde_json::ser::Formatter for Sig17Formatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes the parameter document with 17-significant-digit floats.
pub fn params_doc_to_json(doc: &CircuitParamsDoc) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17Formatter);
    doc.serialize(&mut ser)
        .expect("in-memory serialization cannot fail");
    String::from_utf8(buf).expect("serializer emits UTF-8")
}

pub fn params_doc_from_json(raw: &str) -> Result<CircuitParamsDoc, QuantumError> {
    Ok(serde_json::from_str(raw)?)
}
