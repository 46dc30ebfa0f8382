//! L2-regularized logistic regression trained by full-batch gradient
//! descent on standardized flat windows.

use serde::{Deserialize, Serialize};

use super::{LearnerError, Standardizer};
use crate::features::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticSpec {
    /// Inverse regularization strength: the penalty added to the mean
    /// log-loss is `(1/(2c))·‖w‖²`; the bias is unregularized.
    pub c: f64,
    pub learn_rate: f64,
    pub max_iters: usize,
    /// Stop when the full gradient norm falls below this.
    pub tol: f64,
}

impl Default for LogisticSpec {
    fn default() -> Self {
        Self {
            c: 0.1,
            learn_rate: 0.02,
            max_iters: 5000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub spec: LogisticSpec,
    pub standardizer: Standardizer,
    pub iters_run: usize,
    pub final_loss: f64,
}

impl LogisticModel {
    /// Probability of an up day for an already-standardized row.
    pub fn p_up(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x) + self.bias)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^t)` without overflow.
pub(crate) fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Regularized mean log-loss and its gradient at `(w, b)` — the entry
/// point for finite-difference checks.
pub fn loss_and_grad(
    w: &[f64],
    b: f64,
    x: &[Vec<f64>],
    y: &[Label],
    c: f64,
) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let yi = yi as f64;
        let z = dot(w, xi) + b;
        loss += log1p_exp(-yi * z) / n;
        let coef = -yi * sigmoid(-yi * z) / n;
        for (g, v) in gw.iter_mut().zip(xi) {
            *g += coef * v;
        }
        gb += coef;
    }
    let lambda = 1.0 / c;
    loss += 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    for (g, v) in gw.iter_mut().zip(w) {
        *g += lambda * v;
    }
    (loss, gw, gb)
}

/// Trains on standardized rows to gradient-norm `tol` or `max_iters`,
/// whichever comes first.
pub fn train_logistic(
    x: &[Vec<f64>],
    y: &[Label],
    standardizer: Standardizer,
    spec: &LogisticSpec,
) -> Result<LogisticModel, LearnerError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(LearnerError::InsufficientData(format!(
            "{} rows against {} labels",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut iters_run = 0;
    let mut final_loss = f64::NAN;
    for iter in 0..spec.max_iters {
        let (loss, gw, gb) = loss_and_grad(&w, b, x, y, spec.c);
        if !loss.is_finite() {
            return Err(LearnerError::Diverged {
                architecture: "logistic",
                epoch: iter,
            });
        }
        final_loss = loss;
        iters_run = iter + 1;
        let gnorm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
        if gnorm < spec.tol {
            break;
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= spec.learn_rate * gi;
        }
        b -= spec.learn_rate * gb;
    }
    Ok(LogisticModel {
        weights: w,
        bias: b,
        spec: spec.clone(),
        standardizer,
        iters_run,
        final_loss,
    })
}
