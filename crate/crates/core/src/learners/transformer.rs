//! Small encoder-style transformer over the lookback window.
//!
//! Each window row is projected to `d_model`, tagged with sinusoidal
//! positional encodings, and passed through post-norm blocks: unmasked
//! multi-head self-attention with a residual connection and LayerNorm,
//! then a ReLU feed-forward with its own residual and LayerNorm. The last
//! position's representation drives a single sigmoid head. All gradients
//! are computed analytically (no autodiff), so the finite-difference check
//! in the test suite exercises every backward path.
//!
//! Dropout sites: attention weights (post-softmax) and the feed-forward
//! hidden activation, both inverted-scaled and only during training.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{Adam, Mat};
use super::logistic::{log1p_exp, sigmoid};
use super::{LearnerError, Standardizer};
use crate::features::Label;

pub const LN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub input_dim: usize,
    pub lookback: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub learn_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TransformerSpec {
    fn default() -> Self {
        Self {
            input_dim: crate::features::N_FEATURES,
            lookback: 10,
            d_model: 32,
            n_heads: 4,
            n_blocks: 2,
            d_ff: 64,
            dropout: 0.2,
            learn_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNorm {
    fn identity(d: usize) -> Self {
        Self {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }

    fn zeros(d: usize) -> Self {
        Self {
            gamma: vec![0.0; d],
            beta: vec![0.0; d],
        }
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, LnCache) {
        let d = x.len() as f64;
        let mean = x.iter().sum::<f64>() / d;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv_std = 1.0 / (var + LN_EPSILON).sqrt();
        let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
        let y = xhat
            .iter()
            .zip(self.gamma.iter().zip(&self.beta))
            .map(|(xh, (g, b))| g * xh + b)
            .collect();
        (y, LnCache { xhat, inv_std })
    }

    /// Returns dx; accumulates dgamma/dbeta into `grads`.
    fn backward(&self, dy: &[f64], cache: &LnCache, grads: &mut LayerNorm) -> Vec<f64> {
        let d = dy.len() as f64;
        let mut dxhat = vec![0.0; dy.len()];
        for j in 0..dy.len() {
            grads.gamma[j] += dy[j] * cache.xhat[j];
            grads.beta[j] += dy[j];
            dxhat[j] = dy[j] * self.gamma[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d;
        let mean_dxhat_xhat = dxhat
            .iter()
            .zip(&cache.xhat)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / d;
        (0..dy.len())
            .map(|j| cache.inv_std * (dxhat[j] - mean_dxhat - cache.xhat[j] * mean_dxhat_xhat))
            .collect()
    }
}

struct LnCache {
    xhat: Vec<f64>,
    inv_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub bq: Vec<f64>,
    pub bk: Vec<f64>,
    pub bv: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln1: LayerNorm,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub ln2: LayerNorm,
}

impl Block {
    fn new_random(d_model: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            wq: Mat::xavier(d_model, d_model, rng),
            wk: Mat::xavier(d_model, d_model, rng),
            wv: Mat::xavier(d_model, d_model, rng),
            wo: Mat::xavier(d_model, d_model, rng),
            bq: vec![0.0; d_model],
            bk: vec![0.0; d_model],
            bv: vec![0.0; d_model],
            bo: vec![0.0; d_model],
            ln1: LayerNorm::identity(d_model),
            w1: Mat::xavier(d_ff, d_model, rng),
            b1: vec![0.0; d_ff],
            w2: Mat::xavier(d_model, d_ff, rng),
            b2: vec![0.0; d_model],
            ln2: LayerNorm::identity(d_model),
        }
    }

    fn zeros_like(&self) -> Self {
        let d_model = self.wq.rows;
        let d_ff = self.w1.rows;
        Self {
            wq: Mat::zeros(d_model, d_model),
            wk: Mat::zeros(d_model, d_model),
            wv: Mat::zeros(d_model, d_model),
            wo: Mat::zeros(d_model, d_model),
            bq: vec![0.0; d_model],
            bk: vec![0.0; d_model],
            bv: vec![0.0; d_model],
            bo: vec![0.0; d_model],
            ln1: LayerNorm::zeros(d_model),
            w1: Mat::zeros(d_ff, d_model),
            b1: vec![0.0; d_ff],
            w2: Mat::zeros(d_model, d_ff),
            b2: vec![0.0; d_model],
            ln2: LayerNorm::zeros(d_model),
        }
    }

    fn n_params(&self) -> usize {
        let d_model = self.wq.rows;
        let d_ff = self.w1.rows;
        4 * d_model * d_model + 4 * d_model // attention
            + 2 * 2 * d_model // the two layer norms
            + d_ff * d_model + d_ff + d_model * d_ff + d_model // feed-forward
    }
}

struct BlockCache {
    h_in: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    attn: Vec<Vec<Vec<f64>>>,
    attn_dropped: Vec<Vec<Vec<f64>>>,
    context: Vec<Vec<f64>>,
    ln1: Vec<LnCache>,
    h_mid: Vec<Vec<f64>>,
    ff_pre: Vec<Vec<f64>>,
    ff_act: Vec<Vec<f64>>,
    ln2: Vec<LnCache>,
    h_out: Vec<Vec<f64>>,
}

struct SampleCache {
    x_rows: Vec<Vec<f64>>,
    h0: Vec<Vec<f64>>,
    blocks: Vec<BlockCache>,
    z: f64,
    p: f64,
}

/// Dropout masks for one sample: attention weights per block/head and the
/// feed-forward hidden activation per block/position.
struct TMasks {
    attn: Vec<Vec<Vec<Vec<f64>>>>,
    ff: Vec<Vec<Vec<f64>>>,
}

impl TMasks {
    fn draw(spec: &TransformerSpec, rng: &mut ChaCha8Rng) -> Self {
        let keep = 1.0 - spec.dropout;
        let t = spec.lookback;
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
        let attn = (0..spec.n_blocks)
            .map(|_| {
                (0..spec.n_heads)
                    .map(|_| (0..t).map(|_| bern(t)).collect())
                    .collect()
            })
            .collect();
        let ff = (0..spec.n_blocks)
            .map(|_| (0..t).map(|_| bern(spec.d_ff)).collect())
            .collect();
        TMasks { attn, ff }
    }

    fn identity(spec: &TransformerSpec) -> Self {
        let t = spec.lookback;
        TMasks {
            attn: vec![vec![vec![vec![1.0; t]; t]; spec.n_heads]; spec.n_blocks],
            ff: vec![vec![vec![1.0; spec.d_ff]; t]; spec.n_blocks],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    pub spec: TransformerSpec,
    pub win: Mat,
    pub bin: Vec<f64>,
    pub blocks: Vec<Block>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
    pub standardizer: Standardizer,
    pub epochs_run: usize,
    pub final_loss: f64,
}

/// The classic interleaved sin/cos table: even dims take sin, odd dims the
/// matching cos, with wavelengths geometric in 10000^(2k/d_model).
pub fn positional_encoding(positions: usize, d_model: usize) -> Vec<Vec<f64>> {
    (0..positions)
        .map(|pos| {
            (0..d_model)
                .map(|i| {
                    let k = (i / 2) as f64;
                    let rate = (pos as f64) / 10000f64.powf(2.0 * k / d_model as f64);
                    if i % 2 == 0 {
                        rate.sin()
                    } else {
                        rate.cos()
                    }
                })
                .collect()
        })
        .collect()
}

fn softmax_row(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl TransformerModel {
    pub fn new_random(spec: TransformerSpec, standardizer: Standardizer) -> Self {
        assert!(
            spec.d_model % spec.n_heads == 0,
            "d_model must divide evenly across heads"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let win = Mat::xavier(spec.d_model, spec.input_dim, &mut rng);
        let blocks = (0..spec.n_blocks)
            .map(|_| Block::new_random(spec.d_model, spec.d_ff, &mut rng))
            .collect();
        let limit = (6.0 / (spec.d_model + 1) as f64).sqrt();
        let head_w = (0..spec.d_model)
            .map(|_| -limit + 2.0 * limit * rng.gen::<f64>())
            .collect();
        Self {
            bin: vec![0.0; spec.d_model],
            win,
            blocks,
            head_w,
            head_b: 0.0,
            standardizer,
            epochs_run: 0,
            final_loss: f64::NAN,
            spec,
        }
    }

    pub fn n_params(&self) -> usize {
        self.win.rows * self.win.cols
            + self.bin.len()
            + self.blocks.iter().map(|b| b.n_params()).sum::<usize>()
            + self.head_w.len()
            + 1
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(&self.win.data);
        out.extend_from_slice(&self.bin);
        for b in &self.blocks {
            out.extend_from_slice(&b.wq.data);
            out.extend_from_slice(&b.wk.data);
            out.extend_from_slice(&b.wv.data);
            out.extend_from_slice(&b.wo.data);
            out.extend_from_slice(&b.bq);
            out.extend_from_slice(&b.bk);
            out.extend_from_slice(&b.bv);
            out.extend_from_slice(&b.bo);
            out.extend_from_slice(&b.ln1.gamma);
            out.extend_from_slice(&b.ln1.beta);
            out.extend_from_slice(&b.w1.data);
            out.extend_from_slice(&b.b1);
            out.extend_from_slice(&b.w2.data);
            out.extend_from_slice(&b.b2);
            out.extend_from_slice(&b.ln2.gamma);
            out.extend_from_slice(&b.ln2.beta);
        }
        out.extend_from_slice(&self.head_w);
        out.push(self.head_b);
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut at = 0;
        let take = |dst: &mut [f64], at: &mut usize| {
            dst.copy_from_slice(&p[*at..*at + dst.len()]);
            *at += dst.len();
        };
        take(&mut self.win.data, &mut at);
        take(&mut self.bin, &mut at);
        for b in &mut self.blocks {
            take(&mut b.wq.data, &mut at);
            take(&mut b.wk.data, &mut at);
            take(&mut b.wv.data, &mut at);
            take(&mut b.wo.data, &mut at);
            take(&mut b.bq, &mut at);
            take(&mut b.bk, &mut at);
            take(&mut b.bv, &mut at);
            take(&mut b.bo, &mut at);
            take(&mut b.ln1.gamma, &mut at);
            take(&mut b.ln1.beta, &mut at);
            take(&mut b.w1.data, &mut at);
            take(&mut b.b1, &mut at);
            take(&mut b.w2.data, &mut at);
            take(&mut b.b2, &mut at);
            take(&mut b.ln2.gamma, &mut at);
            take(&mut b.ln2.beta, &mut at);
        }
        take(&mut self.head_w, &mut at);
        self.head_b = p[at];
    }

    fn forward(&self, rows: &[&[f64]], masks: &TMasks) -> SampleCache {
        let spec = &self.spec;
        let d_k = spec.d_model / spec.n_heads;
        let scale = 1.0 / (d_k as f64).sqrt();
        let pe = positional_encoding(rows.len(), spec.d_model);
        let x_rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let h0: Vec<Vec<f64>> = x_rows
            .iter()
            .zip(&pe)
            .map(|(x, pe_row)| {
                let mut h = self.win.matvec(x);
                for j in 0..spec.d_model {
                    h[j] += self.bin[j] + pe_row[j];
                }
                h
            })
            .collect();

        let mut h = h0.clone();
        let mut block_caches = Vec::with_capacity(spec.n_blocks);
        for (bi, block) in self.blocks.iter().enumerate() {
            let h_in = h.clone();
            let q: Vec<Vec<f64>> = h_in
                .iter()
                .map(|r| add_bias(block.wq.matvec(r), &block.bq))
                .collect();
            let k: Vec<Vec<f64>> = h_in
                .iter()
                .map(|r| add_bias(block.wk.matvec(r), &block.bk))
                .collect();
            let v: Vec<Vec<f64>> = h_in
                .iter()
                .map(|r| add_bias(block.wv.matvec(r), &block.bv))
                .collect();
            let t_len = h_in.len();
            let mut attn = Vec::with_capacity(spec.n_heads);
            let mut attn_dropped = Vec::with_capacity(spec.n_heads);
            let mut context = vec![vec![0.0; spec.d_model]; t_len];
            for head in 0..spec.n_heads {
                let off = head * d_k;
                let mut a_head = Vec::with_capacity(t_len);
                let mut ad_head = Vec::with_capacity(t_len);
                for t in 0..t_len {
                    let scores: Vec<f64> = (0..t_len)
                        .map(|s| {
                            scale
                                * (0..d_k)
                                    .map(|j| q[t][off + j] * k[s][off + j])
                                    .sum::<f64>()
                        })
                        .collect();
                    let a = softmax_row(&scores);
                    let ad: Vec<f64> = a
                        .iter()
                        .zip(&masks.attn[bi][head][t])
                        .map(|(w, m)| w * m)
                        .collect();
                    for s in 0..t_len {
                        for j in 0..d_k {
                            context[t][off + j] += ad[s] * v[s][off + j];
                        }
                    }
                    a_head.push(a);
                    ad_head.push(ad);
                }
                attn.push(a_head);
                attn_dropped.push(ad_head);
            }
            let mut ln1_caches = Vec::with_capacity(t_len);
            let h_mid: Vec<Vec<f64>> = (0..t_len)
                .map(|t| {
                    let mha = add_bias(block.wo.matvec(&context[t]), &block.bo);
                    let sum1: Vec<f64> = h_in[t].iter().zip(&mha).map(|(a, b)| a + b).collect();
                    let (y, cache) = block.ln1.forward(&sum1);
                    ln1_caches.push(cache);
                    y
                })
                .collect();
            let mut ff_pre = Vec::with_capacity(t_len);
            let mut ff_act = Vec::with_capacity(t_len);
            let mut ln2_caches = Vec::with_capacity(t_len);
            let h_out: Vec<Vec<f64>> = (0..t_len)
                .map(|t| {
                    let pre = add_bias(block.w1.matvec(&h_mid[t]), &block.b1);
                    let act: Vec<f64> = pre
                        .iter()
                        .zip(&masks.ff[bi][t])
                        .map(|(&z, m)| z.max(0.0) * m)
                        .collect();
                    let ff_out = add_bias(block.w2.matvec(&act), &block.b2);
                    let sum2: Vec<f64> =
                        h_mid[t].iter().zip(&ff_out).map(|(a, b)| a + b).collect();
                    let (y, cache) = block.ln2.forward(&sum2);
                    ff_pre.push(pre);
                    ff_act.push(act);
                    ln2_caches.push(cache);
                    y
                })
                .collect();
            h = h_out.clone();
            block_caches.push(BlockCache {
                h_in,
                q,
                k,
                v,
                attn,
                attn_dropped,
                context,
                ln1: ln1_caches,
                h_mid,
                ff_pre,
                ff_act,
                ln2: ln2_caches,
                h_out,
            });
        }
        let last = h.last().expect("non-empty sequence");
        let z = last
            .iter()
            .zip(&self.head_w)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + self.head_b;
        SampleCache {
            x_rows,
            h0,
            blocks: block_caches,
            z,
            p: sigmoid(z),
        }
    }

    /// Probability of an up day for an already-standardized flat window;
    /// dropout off.
    pub fn p_up(&self, flat: &[f64]) -> f64 {
        let rows: Vec<&[f64]> = flat.chunks_exact(self.spec.input_dim).collect();
        debug_assert_eq!(rows.len(), self.spec.lookback);
        self.forward(&rows, &TMasks::identity(&self.spec)).p
    }

    fn backward_sample(
        &self,
        cache: &SampleCache,
        masks: &TMasks,
        dz: f64,
        g_win: &mut Mat,
        g_bin: &mut [f64],
        g_blocks: &mut [Block],
        g_head_w: &mut [f64],
        g_head_b: &mut f64,
    ) {
        let spec = &self.spec;
        let d_k = spec.d_model / spec.n_heads;
        let scale = 1.0 / (d_k as f64).sqrt();
        let t_len = cache.x_rows.len();
        let last_h = cache
            .blocks
            .last()
            .map(|b| &b.h_out[t_len - 1])
            .unwrap_or(&cache.h0[t_len - 1]);
        for j in 0..spec.d_model {
            g_head_w[j] += dz * last_h[j];
        }
        *g_head_b += dz;
        let mut dh: Vec<Vec<f64>> = vec![vec![0.0; spec.d_model]; t_len];
        for j in 0..spec.d_model {
            dh[t_len - 1][j] = dz * self.head_w[j];
        }
        for bi in (0..self.blocks.len()).rev() {
            let block = &self.blocks[bi];
            let bc = &cache.blocks[bi];
            let gb = &mut g_blocks[bi];
            // --- second residual + LayerNorm, then the feed-forward ---
            let mut d_h_mid: Vec<Vec<f64>> = vec![vec![0.0; spec.d_model]; t_len];
            for t in 0..t_len {
                let d_sum2 = block.ln2.backward(&dh[t], &bc.ln2[t], &mut gb.ln2);
                for j in 0..spec.d_model {
                    d_h_mid[t][j] += d_sum2[j];
                }
                gb.w2.add_outer(&d_sum2, &bc.ff_act[t], 1.0);
                for j in 0..spec.d_model {
                    gb.b2[j] += d_sum2[j];
                }
                let d_act = block.w2.tmatvec(&d_sum2);
                let d_pre: Vec<f64> = (0..spec.d_ff)
                    .map(|j| {
                        let relu_grad = if bc.ff_pre[t][j] > 0.0 { 1.0 } else { 0.0 };
                        d_act[j] * masks.ff[bi][t][j] * relu_grad
                    })
                    .collect();
                gb.w1.add_outer(&d_pre, &bc.h_mid[t], 1.0);
                for j in 0..spec.d_ff {
                    gb.b1[j] += d_pre[j];
                }
                let dx = block.w1.tmatvec(&d_pre);
                for j in 0..spec.d_model {
                    d_h_mid[t][j] += dx[j];
                }
            }
            // --- first residual + LayerNorm, then the attention ---
            let mut d_h_in: Vec<Vec<f64>> = vec![vec![0.0; spec.d_model]; t_len];
            let mut d_context: Vec<Vec<f64>> = vec![vec![0.0; spec.d_model]; t_len];
            for t in 0..t_len {
                let d_sum1 = block.ln1.backward(&d_h_mid[t], &bc.ln1[t], &mut gb.ln1);
                for j in 0..spec.d_model {
                    d_h_in[t][j] += d_sum1[j];
                }
                gb.wo.add_outer(&d_sum1, &bc.context[t], 1.0);
                for j in 0..spec.d_model {
                    gb.bo[j] += d_sum1[j];
                }
                let dc = block.wo.tmatvec(&d_sum1);
                for j in 0..spec.d_model {
                    d_context[t][j] += dc[j];
                }
            }
            let mut dq = vec![vec![0.0; spec.d_model]; t_len];
            let mut dk = vec![vec![0.0; spec.d_model]; t_len];
            let mut dv = vec![vec![0.0; spec.d_model]; t_len];
            for head in 0..spec.n_heads {
                let off = head * d_k;
                for t in 0..t_len {
                    // d(attention weights) through the context sum.
                    let mut d_ad = vec![0.0; t_len];
                    for s in 0..t_len {
                        for j in 0..d_k {
                            d_ad[s] += d_context[t][off + j] * bc.v[s][off + j];
                            dv[s][off + j] +=
                                bc.attn_dropped[head][t][s] * d_context[t][off + j];
                        }
                    }
                    // Through dropout, then the softmax Jacobian.
                    let a = &bc.attn[head][t];
                    let d_a: Vec<f64> = (0..t_len)
                        .map(|s| d_ad[s] * masks.attn[bi][head][t][s])
                        .collect();
                    let inner: f64 = (0..t_len).map(|s| a[s] * d_a[s]).sum();
                    for s in 0..t_len {
                        let d_score = a[s] * (d_a[s] - inner);
                        for j in 0..d_k {
                            dq[t][off + j] += d_score * scale * bc.k[s][off + j];
                            dk[s][off + j] += d_score * scale * bc.q[t][off + j];
                        }
                    }
                }
            }
            for t in 0..t_len {
                gb.wq.add_outer(&dq[t], &bc.h_in[t], 1.0);
                gb.wk.add_outer(&dk[t], &bc.h_in[t], 1.0);
                gb.wv.add_outer(&dv[t], &bc.h_in[t], 1.0);
                for j in 0..spec.d_model {
                    gb.bq[j] += dq[t][j];
                    gb.bk[j] += dk[t][j];
                    gb.bv[j] += dv[t][j];
                }
                let mut dx = block.wq.tmatvec(&dq[t]);
                for (d, val) in dx.iter_mut().zip(block.wk.tmatvec(&dk[t])) {
                    *d += val;
                }
                for (d, val) in dx.iter_mut().zip(block.wv.tmatvec(&dv[t])) {
                    *d += val;
                }
                for j in 0..spec.d_model {
                    d_h_in[t][j] += dx[j];
                }
            }
            dh = d_h_in;
        }
        // Input projection; the positional encoding is additive and
        // parameter-free, so dh passes straight through it.
        for t in 0..t_len {
            g_win.add_outer(&dh[t], &cache.x_rows[t], 1.0);
            for j in 0..spec.d_model {
                g_bin[j] += dh[t][j];
            }
        }
    }

    fn batch_loss_grads(
        &self,
        x: &[Vec<f64>],
        y: &[Label],
        batch: &[usize],
        masks: &[TMasks],
    ) -> (f64, Vec<f64>) {
        let scale = 1.0 / batch.len() as f64;
        let mut g_win = Mat::zeros(self.win.rows, self.win.cols);
        let mut g_bin = vec![0.0; self.bin.len()];
        let mut g_blocks: Vec<Block> = self.blocks.iter().map(|b| b.zeros_like()).collect();
        let mut g_head_w = vec![0.0; self.head_w.len()];
        let mut g_head_b = 0.0;
        let mut loss = 0.0;
        for (mi, &si) in batch.iter().enumerate() {
            let rows: Vec<&[f64]> = x[si].chunks_exact(self.spec.input_dim).collect();
            let cache = self.forward(&rows, &masks[mi]);
            let y01 = if y[si] == 1 { 1.0 } else { 0.0 };
            loss += scale * log1p_exp(-(y[si] as f64) * cache.z);
            let dz = scale * (cache.p - y01);
            self.backward_sample(
                &cache,
                &masks[mi],
                dz,
                &mut g_win,
                &mut g_bin,
                &mut g_blocks,
                &mut g_head_w,
                &mut g_head_b,
            );
        }
        let mut grads = Vec::with_capacity(self.n_params());
        grads.extend_from_slice(&g_win.data);
        grads.extend_from_slice(&g_bin);
        for b in &g_blocks {
            grads.extend_from_slice(&b.wq.data);
            grads.extend_from_slice(&b.wk.data);
            grads.extend_from_slice(&b.wv.data);
            grads.extend_from_slice(&b.wo.data);
            grads.extend_from_slice(&b.bq);
            grads.extend_from_slice(&b.bk);
            grads.extend_from_slice(&b.bv);
            grads.extend_from_slice(&b.bo);
            grads.extend_from_slice(&b.ln1.gamma);
            grads.extend_from_slice(&b.ln1.beta);
            grads.extend_from_slice(&b.w1.data);
            grads.extend_from_slice(&b.b1);
            grads.extend_from_slice(&b.w2.data);
            grads.extend_from_slice(&b.b2);
            grads.extend_from_slice(&b.ln2.gamma);
            grads.extend_from_slice(&b.ln2.beta);
        }
        grads.extend_from_slice(&g_head_w);
        grads.push(g_head_b);
        (loss, grads)
    }

    /// Deterministic (dropout-free) loss/gradient over the whole set — the
    /// entry point for finite-difference checks.
    pub fn loss_and_grads(&self, x: &[Vec<f64>], y: &[Label]) -> (f64, Vec<f64>) {
        let batch: Vec<usize> = (0..x.len()).collect();
        let identity = TMasks::identity(&self.spec);
        let masks: Vec<TMasks> = (0..x.len())
            .map(|_| TMasks {
                attn: identity.attn.clone(),
                ff: identity.ff.clone(),
            })
            .collect();
        self.batch_loss_grads(x, y, &batch, &masks)
    }

    /// Post-softmax attention matrices (dropout off): block × head × T × T.
    pub fn attention_maps(&self, flat: &[f64]) -> Vec<Vec<Vec<Vec<f64>>>> {
        let rows: Vec<&[f64]> = flat.chunks_exact(self.spec.input_dim).collect();
        let cache = self.forward(&rows, &TMasks::identity(&self.spec));
        cache.blocks.iter().map(|b| b.attn.clone()).collect()
    }
}

fn add_bias(mut v: Vec<f64>, b: &[f64]) -> Vec<f64> {
    for (x, y) in v.iter_mut().zip(b) {
        *x += y;
    }
    v
}

pub fn train_decision_transformer(
    x: &[Vec<f64>],
    y: &[Label],
    standardizer: Standardizer,
    spec: &TransformerSpec,
) -> Result<TransformerModel, LearnerError> {
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
    let mut model = TransformerModel::new_random(spec.clone(), standardizer);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let mut adam = Adam::new(spec.learn_rate, model.n_params());
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut last_loss = f64::NAN;
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let masks: Vec<TMasks> = batch.iter().map(|_| TMasks::draw(spec, &mut rng)).collect();
            let (loss, grads) = model.batch_loss_grads(x, y, batch, &masks);
            if !loss.is_finite() {
                return Err(LearnerError::Diverged {
                    architecture: "transformer",
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

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_stats(d: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    fn toy_spec() -> TransformerSpec {
        TransformerSpec {
            input_dim: 3,
            lookback: 4,
            d_model: 8,
            n_heads: 2,
            n_blocks: 1,
            d_ff: 8,
            dropout: 0.0,
            learn_rate: 1e-3,
            batch_size: 4,
            epochs: 2,
            seed: 13,
        }
    }

    #[test]
    fn positional_encoding_matches_closed_form() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe[0], vec![0.0, 1.0, 0.0, 1.0]);
        assert!((pe[1][0] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[1][1] - 1f64.cos()).abs() < 1e-15);
        let rate = 2.0 / 10000f64.powf(0.5);
        assert!((pe[2][2] - rate.sin()).abs() < 1e-15);
        assert!((pe[2][3] - rate.cos()).abs() < 1e-15);
    }

    #[test]
    fn attention_rows_are_probability_distributions() {
        let spec = toy_spec();
        let model = TransformerModel::new_random(spec, identity_stats(12));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let flat: Vec<f64> = (0..12).map(|_| rng.gen::<f64>() - 0.5).collect();
        let maps = model.attention_maps(&flat);
        for block in &maps {
            for head in block {
                for row in head {
                    let sum: f64 = row.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12, "row sums to {sum}");
                    assert!(row.iter().all(|&w| w >= 0.0));
                }
            }
        }
    }

    #[test]
    fn single_position_attends_only_to_itself() {
        let spec = TransformerSpec {
            lookback: 1,
            ..toy_spec()
        };
        let model = TransformerModel::new_random(spec, identity_stats(3));
        let maps = model.attention_maps(&[0.3, -0.8, 0.1]);
        for block in &maps {
            for head in block {
                assert_eq!(head.len(), 1);
                assert_eq!(head[0][0], 1.0);
            }
        }
    }

    #[test]
    fn zero_parameters_give_exactly_half() {
        let spec = toy_spec();
        let mut model = TransformerModel::new_random(spec, identity_stats(12));
        model.set_params_flat(&vec![0.0; model.n_params()]);
        assert_eq!(model.p_up(&vec![0.4; 12]), 0.5);
    }

    #[test]
    fn layer_norm_output_is_standardized_and_affine() {
        let ln = LayerNorm {
            gamma: vec![2.0; 4],
            beta: vec![1.0; 4],
        };
        let (y, _) = ln.forward(&[1.0, 2.0, 3.0, 4.0]);
        // x̂ of [1,2,3,4] is symmetric around 0 with population variance 1.
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        assert!((mean - 1.0).abs() < 1e-12);
        let var: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!((var - 4.0).abs() < 1e-4); // 1e-5 epsilon shrinks it slightly
    }

    #[test]
    fn gradients_match_finite_differences_on_toy() {
        let spec = toy_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..12).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect())
            .collect();
        let y: Vec<Label> = vec![1, -1, 1, 1, -1];
        let model = TransformerModel::new_random(spec, identity_stats(12));
        let (_, analytic) = model.loss_and_grads(&x, &y);
        let h = 1e-5;
        let base = model.params_flat();
        for j in 0..base.len() {
            let mut m = model.clone();
            let mut p = base.clone();
            p[j] += h;
            m.set_params_flat(&p);
            let lp = m.loss_and_grads(&x, &y).0;
            p[j] -= 2.0 * h;
            m.set_params_flat(&p);
            let lm = m.loss_and_grads(&x, &y).0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (analytic[j] - fd).abs() / analytic[j].abs().max(fd.abs()).max(1e-4);
            assert!(
                rel < 1e-4,
                "param {j}: analytic {} vs fd {fd} (rel {rel})",
                analytic[j]
            );
        }
    }

    #[test]
    fn learns_a_last_row_sign_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 120;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..12).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect())
            .collect();
        let y: Vec<Label> = x
            .iter()
            .map(|r| if r[9] + r[10] + r[11] > 0.0 { 1 } else { -1 })
            .collect();
        let spec = TransformerSpec {
            epochs: 60,
            learn_rate: 3e-3,
            batch_size: 16,
            ..toy_spec()
        };
        let m = train_decision_transformer(&x, &y, identity_stats(12), &spec).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| {
                let label = if m.p_up(xi) >= 0.5 { 1 } else { -1 };
                label == yi
            })
            .count();
        assert!(
            correct as f64 / n as f64 > 0.9,
            "train accuracy {}",
            correct as f64 / n as f64
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..12).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let y: Vec<Label> = (0..20).map(|i| if i % 3 == 0 { -1 } else { 1 }).collect();
        let spec = TransformerSpec {
            dropout: 0.2,
            epochs: 2,
            ..toy_spec()
        };
        let a = train_decision_transformer(&x, &y, identity_stats(12), &spec).unwrap();
        let b = train_decision_transformer(&x, &y, identity_stats(12), &spec).unwrap();
        assert_eq!(a, b);
    }
}
