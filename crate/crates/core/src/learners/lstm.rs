//! Stacked LSTM trained with full backpropagation through time.
//!
//! Gate equations per step (σ = sigmoid, ⊙ = elementwise):
//!   f = σ(W_f·[h,x]+b_f), i = σ(W_i·[h,x]+b_i), g = tanh(W_c·[h,x]+b_c),
//!   c = f⊙c_prev + i⊙g,  o = σ(W_o·[h,x]+b_o),  h = o⊙tanh(c).
//! The final hidden state feeds a single sigmoid unit; training minimizes
//! binary cross-entropy with Adam. Inverted dropout is applied to layer
//! outputs only (never to the recurrent state).

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{Adam, Mat};
use super::logistic::{log1p_exp, sigmoid};
use super::{LearnerError, Standardizer};
use crate::features::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub input_dim: usize,
    pub lookback: usize,
    pub layer_sizes: Vec<usize>,
    pub dropout: f64,
    pub learn_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LstmSpec {
    fn default() -> Self {
        Self {
            input_dim: crate::features::N_FEATURES,
            lookback: 5,
            layer_sizes: vec![32, 16],
            dropout: 0.3,
            learn_rate: 1e-3,
            batch_size: 32,
            epochs: 15,
            seed: 0,
        }
    }
}

/// One cell: four gate matrices over the concatenation `[h_prev, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub units: usize,
    pub input_dim: usize,
    pub wf: Mat,
    pub wi: Mat,
    pub wc: Mat,
    pub wo: Mat,
    pub bf: Vec<f64>,
    pub bi: Vec<f64>,
    pub bc: Vec<f64>,
    pub bo: Vec<f64>,
}

impl LstmLayer {
    fn new_random(units: usize, input_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let cols = units + input_dim;
        Self {
            units,
            input_dim,
            wf: Mat::xavier(units, cols, rng),
            wi: Mat::xavier(units, cols, rng),
            wc: Mat::xavier(units, cols, rng),
            wo: Mat::xavier(units, cols, rng),
            bf: vec![0.0; units],
            bi: vec![0.0; units],
            bc: vec![0.0; units],
            bo: vec![0.0; units],
        }
    }

    fn zeros_like(&self) -> Self {
        let cols = self.units + self.input_dim;
        Self {
            units: self.units,
            input_dim: self.input_dim,
            wf: Mat::zeros(self.units, cols),
            wi: Mat::zeros(self.units, cols),
            wc: Mat::zeros(self.units, cols),
            wo: Mat::zeros(self.units, cols),
            bf: vec![0.0; self.units],
            bi: vec![0.0; self.units],
            bc: vec![0.0; self.units],
            bo: vec![0.0; self.units],
        }
    }

    fn n_params(&self) -> usize {
        4 * self.units * (self.units + self.input_dim) + 4 * self.units
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    concat: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Inverted-dropout masks: entries are 0 or 1/keep. One mask per timestep
/// for every layer that feeds another layer, plus one over the final hidden
/// state before the head.
#[derive(Debug, Clone)]
struct Masks {
    seq: Vec<Vec<Vec<f64>>>,
    last: Vec<f64>,
}

impl Masks {
    fn draw(spec: &LstmSpec, rng: &mut ChaCha8Rng) -> Self {
        let keep = 1.0 - spec.dropout;
        let mut bern = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let n_layers = spec.layer_sizes.len();
        let seq = (0..n_layers - 1)
            .map(|l| (0..spec.lookback).map(|_| bern(spec.layer_sizes[l])).collect())
            .collect();
        let last = bern(spec.layer_sizes[n_layers - 1]);
        Masks { seq, last }
    }

    fn identity(spec: &LstmSpec) -> Self {
        let n_layers = spec.layer_sizes.len();
        Masks {
            seq: (0..n_layers - 1)
                .map(|l| vec![vec![1.0; spec.layer_sizes[l]]; spec.lookback])
                .collect(),
            last: vec![1.0; spec.layer_sizes[n_layers - 1]],
        }
    }
}

struct SampleCache {
    layers: Vec<Vec<StepCache>>,
    final_dropped: Vec<f64>,
    z: f64,
    p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub spec: LstmSpec,
    pub layers: Vec<LstmLayer>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
    pub standardizer: Standardizer,
    pub epochs_run: usize,
    pub final_loss: f64,
}

impl LstmModel {
    pub fn new_random(spec: LstmSpec, standardizer: Standardizer) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut layers = Vec::new();
        let mut in_dim = spec.input_dim;
        for &units in &spec.layer_sizes {
            layers.push(LstmLayer::new_random(units, in_dim, &mut rng));
            in_dim = units;
        }
        let head_units = *spec.layer_sizes.last().expect("at least one layer");
        let limit = (6.0 / (head_units + 1) as f64).sqrt();
        let head_w = (0..head_units)
            .map(|_| -limit + 2.0 * limit * rng.gen::<f64>())
            .collect();
        Self {
            spec,
            layers,
            head_w,
            head_b: 0.0,
            standardizer,
            epochs_run: 0,
            final_loss: f64::NAN,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.n_params()).sum::<usize>() + self.head_w.len() + 1
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.wf.data);
            out.extend_from_slice(&l.wi.data);
            out.extend_from_slice(&l.wc.data);
            out.extend_from_slice(&l.wo.data);
            out.extend_from_slice(&l.bf);
            out.extend_from_slice(&l.bi);
            out.extend_from_slice(&l.bc);
            out.extend_from_slice(&l.bo);
        }
        out.extend_from_slice(&self.head_w);
        out.push(self.head_b);
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut at = 0;
        let take = |dst: &mut [f64], src: &[f64], at: &mut usize| {
            dst.copy_from_slice(&src[*at..*at + dst.len()]);
            *at += dst.len();
        };
        for l in &mut self.layers {
            take(&mut l.wf.data, p, &mut at);
            take(&mut l.wi.data, p, &mut at);
            take(&mut l.wc.data, p, &mut at);
            take(&mut l.wo.data, p, &mut at);
            take(&mut l.bf, p, &mut at);
            take(&mut l.bi, p, &mut at);
            take(&mut l.bc, p, &mut at);
            take(&mut l.bo, p, &mut at);
        }
        take(&mut self.head_w, p, &mut at);
        self.head_b = p[at];
    }

    fn forward(&self, rows: &[&[f64]], masks: &Masks) -> SampleCache {
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        let mut inputs: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut steps = Vec::with_capacity(inputs.len());
            let mut h_prev = vec![0.0; layer.units];
            let mut c_prev = vec![0.0; layer.units];
            let mut outputs = Vec::with_capacity(inputs.len());
            for (t, x) in inputs.iter().enumerate() {
                let mut concat = Vec::with_capacity(layer.units + layer.input_dim);
                concat.extend_from_slice(&h_prev);
                concat.extend_from_slice(x);
                let zf = add_bias(layer.wf.matvec(&concat), &layer.bf);
                let zi = add_bias(layer.wi.matvec(&concat), &layer.bi);
                let zg = add_bias(layer.wc.matvec(&concat), &layer.bc);
                let zo = add_bias(layer.wo.matvec(&concat), &layer.bo);
                let f: Vec<f64> = zf.iter().map(|&v| sigmoid(v)).collect();
                let i: Vec<f64> = zi.iter().map(|&v| sigmoid(v)).collect();
                let g: Vec<f64> = zg.iter().map(|&v| v.tanh()).collect();
                let o: Vec<f64> = zo.iter().map(|&v| sigmoid(v)).collect();
                let c: Vec<f64> = (0..layer.units)
                    .map(|u| f[u] * c_prev[u] + i[u] * g[u])
                    .collect();
                let tanh_c: Vec<f64> = c.iter().map(|&v| v.tanh()).collect();
                let h: Vec<f64> = (0..layer.units).map(|u| o[u] * tanh_c[u]).collect();
                let out = if li + 1 < self.layers.len() {
                    elem_mul(&h, &masks.seq[li][t])
                } else {
                    h.clone()
                };
                outputs.push(out);
                steps.push(StepCache {
                    concat,
                    f,
                    i,
                    g,
                    o,
                    c: c.clone(),
                    tanh_c,
                });
                h_prev = h;
                c_prev = c;
            }
            layer_caches.push(steps);
            inputs = outputs;
        }
        let final_dropped = elem_mul(inputs.last().expect("non-empty sequence"), &masks.last);
        let z = dot(&self.head_w, &final_dropped) + self.head_b;
        let p = sigmoid(z);
        SampleCache {
            layers: layer_caches,
            final_dropped,
            z,
            p,
        }
    }

    /// Probability of an up day for an already-standardized flat window;
    /// dropout off.
    pub fn p_up(&self, flat: &[f64]) -> f64 {
        let rows: Vec<&[f64]> = flat.chunks_exact(self.spec.input_dim).collect();
        debug_assert_eq!(rows.len(), self.spec.lookback);
        let masks = Masks::identity(&self.spec);
        self.forward(&rows, &masks).p
    }

    /// Mean loss and flat gradient over a batch; masks supply dropout (or
    /// identity for a deterministic check).
    fn batch_loss_grads(
        &self,
        x: &[Vec<f64>],
        y: &[Label],
        batch: &[usize],
        masks: &[Masks],
    ) -> (f64, Vec<f64>) {
        let scale = 1.0 / batch.len() as f64;
        let mut gw_layers: Vec<LstmLayer> = self.layers.iter().map(|l| l.zeros_like()).collect();
        let mut g_head_w = vec![0.0; self.head_w.len()];
        let mut g_head_b = 0.0;
        let mut loss = 0.0;
        for (bi, &si) in batch.iter().enumerate() {
            let rows: Vec<&[f64]> = x[si].chunks_exact(self.spec.input_dim).collect();
            let cache = self.forward(&rows, &masks[bi]);
            let y01 = if y[si] == 1 { 1.0 } else { 0.0 };
            loss += scale * log1p_exp(-(y[si] as f64) * cache.z);
            let dz = scale * (cache.p - y01);
            for (gw, hv) in g_head_w.iter_mut().zip(&cache.final_dropped) {
                *gw += dz * hv;
            }
            g_head_b += dz;

            // Gradient w.r.t. each layer's output sequence, starting from
            // the head through the final-state dropout mask.
            let n_layers = self.layers.len();
            let last_t = rows.len() - 1;
            let mut dh_seq: Vec<Vec<f64>> =
                vec![vec![0.0; self.layers[n_layers - 1].units]; rows.len()];
            for u in 0..self.layers[n_layers - 1].units {
                dh_seq[last_t][u] = dz * self.head_w[u] * masks[bi].last[u];
            }
            for li in (0..n_layers).rev() {
                let dx_seq = backward_layer(
                    &self.layers[li],
                    &cache.layers[li],
                    &dh_seq,
                    &mut gw_layers[li],
                );
                if li > 0 {
                    dh_seq = dx_seq
                        .into_iter()
                        .enumerate()
                        .map(|(t, dx)| elem_mul(&dx, &masks[bi].seq[li - 1][t]))
                        .collect();
                }
            }
        }
        let mut grads = Vec::with_capacity(self.n_params());
        for l in &gw_layers {
            grads.extend_from_slice(&l.wf.data);
            grads.extend_from_slice(&l.wi.data);
            grads.extend_from_slice(&l.wc.data);
            grads.extend_from_slice(&l.wo.data);
            grads.extend_from_slice(&l.bf);
            grads.extend_from_slice(&l.bi);
            grads.extend_from_slice(&l.bc);
            grads.extend_from_slice(&l.bo);
        }
        grads.extend_from_slice(&g_head_w);
        grads.push(g_head_b);
        (loss, grads)
    }

    /// Deterministic (dropout-free) loss/gradient over the whole set — the
    /// entry point for finite-difference checks.
    pub fn loss_and_grads(&self, x: &[Vec<f64>], y: &[Label]) -> (f64, Vec<f64>) {
        let batch: Vec<usize> = (0..x.len()).collect();
        let masks = vec![Masks::identity(&self.spec); x.len()];
        self.batch_loss_grads(x, y, &batch, &masks)
    }
}

fn add_bias(mut v: Vec<f64>, b: &[f64]) -> Vec<f64> {
    for (x, y) in v.iter_mut().zip(b) {
        *x += y;
    }
    v
}

fn elem_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BPTT through one layer. `dh_seq` holds ∂L/∂h_t contributions from above;
/// gradients accumulate into `grads`; returns ∂L/∂x_t per step.
fn backward_layer(
    layer: &LstmLayer,
    steps: &[StepCache],
    dh_seq: &[Vec<f64>],
    grads: &mut LstmLayer,
) -> Vec<Vec<f64>> {
    let units = layer.units;
    let mut dx_seq = vec![vec![0.0; layer.input_dim]; steps.len()];
    let mut dh_next = vec![0.0; units];
    let mut dc_next = vec![0.0; units];
    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        let dh: Vec<f64> = (0..units).map(|u| dh_seq[t][u] + dh_next[u]).collect();
        let mut dzf = vec![0.0; units];
        let mut dzi = vec![0.0; units];
        let mut dzg = vec![0.0; units];
        let mut dzo = vec![0.0; units];
        let mut dc = vec![0.0; units];
        for u in 0..units {
            let do_ = dh[u] * s.tanh_c[u];
            dc[u] = dh[u] * s.o[u] * (1.0 - s.tanh_c[u] * s.tanh_c[u]) + dc_next[u];
            let c_prev = if t > 0 { steps[t - 1].c[u] } else { 0.0 };
            let df = dc[u] * c_prev;
            let di = dc[u] * s.g[u];
            let dg = dc[u] * s.i[u];
            dzf[u] = df * s.f[u] * (1.0 - s.f[u]);
            dzi[u] = di * s.i[u] * (1.0 - s.i[u]);
            dzg[u] = dg * (1.0 - s.g[u] * s.g[u]);
            dzo[u] = do_ * s.o[u] * (1.0 - s.o[u]);
        }
        grads.wf.add_outer(&dzf, &s.concat, 1.0);
        grads.wi.add_outer(&dzi, &s.concat, 1.0);
        grads.wc.add_outer(&dzg, &s.concat, 1.0);
        grads.wo.add_outer(&dzo, &s.concat, 1.0);
        for u in 0..units {
            grads.bf[u] += dzf[u];
            grads.bi[u] += dzi[u];
            grads.bc[u] += dzg[u];
            grads.bo[u] += dzo[u];
        }
        let mut dconcat = layer.wf.tmatvec(&dzf);
        for (d, v) in dconcat.iter_mut().zip(layer.wi.tmatvec(&dzi)) {
            *d += v;
        }
        for (d, v) in dconcat.iter_mut().zip(layer.wc.tmatvec(&dzg)) {
            *d += v;
        }
        for (d, v) in dconcat.iter_mut().zip(layer.wo.tmatvec(&dzo)) {
            *d += v;
        }
        for u in 0..units {
            dh_next[u] = dconcat[u];
        }
        dx_seq[t].copy_from_slice(&dconcat[units..]);
        for u in 0..units {
            dc_next[u] = dc[u] * steps[t].f[u];
        }
    }
    dx_seq
}

/// Trains on standardized flat windows. Shuffling and dropout masks draw
/// from `spec.seed`; the last partial batch is kept.
pub fn train_lstm(
    x: &[Vec<f64>],
    y: &[Label],
    standardizer: Standardizer,
    spec: &LstmSpec,
) -> Result<LstmModel, LearnerError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(LearnerError::InsufficientData(format!(
            "{} rows against {} labels",
            x.len(),
            y.len()
        )));
    }
    if x[0].len() != spec.input_dim * spec.lookback {
        return Err(LearnerError::ShapeMismatch {
            expected: spec.input_dim * spec.lookback,
            got: x[0].len(),
        });
    }
    let mut model = LstmModel::new_random(spec.clone(), standardizer);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let mut adam = Adam::new(spec.learn_rate, model.n_params());
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut last_loss = f64::NAN;
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let masks: Vec<Masks> = batch.iter().map(|_| Masks::draw(spec, &mut rng)).collect();
            let (loss, grads) = model.batch_loss_grads(x, y, batch, &masks);
            if !loss.is_finite() {
                return Err(LearnerError::Diverged {
                    architecture: "lstm",
                    epoch,
                });
            }
            epoch_loss += loss;
            batches += 1.0;
            let mut params = model.params_flat();
            adam.step(&mut params, &grads);
            model.set_params_flat(&params);
        }
        last_loss = epoch_loss / batches;
        model.epochs_run = epoch + 1;
    }
    model.final_loss = last_loss;
    Ok(model)
}
