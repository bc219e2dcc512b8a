//! Four-term training objective of the semantic mapper.
//!
//! For a batch of embeddings `u_s` with outputs `v_s = SM(u_s)`:
//!
//! - smoothness: mean over sampled pairs of `|T(D(u_s, u_r)) - D(v_s, v_r)|`,
//!   where `T` is the distance rescaling;
//! - balance: mean over items of `|sum_i sign(v_si)| / |V|`;
//! - unbiased: mean over tokens of `|sum_s sign(v_si)| / n`;
//! - contrastive: mean over (original, augmented) pairs of `D(v_s, v_r)`.
//!
//! Each term is averaged so that its scale does not depend on batch size or
//! vocabulary size. `sign` is `tanh(x / tau)` for training and the hard sign
//! for reporting.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::mapper::{Activation, MapperParams};
use super::RescaleBounds;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub smoothness: f64,
    pub balance: f64,
    pub unbiased: f64,
    pub contrastive: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            smoothness: 1.0,
            balance: 1.0,
            unbiased: 1.0,
            contrastive: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignMode {
    /// `tanh(x / tau)`, differentiable.
    Smooth(f64),
    Hard,
}

impl SignMode {
    fn value(self, x: f64) -> f64 {
        match self {
            SignMode::Smooth(tau) => (x / tau).tanh(),
            SignMode::Hard => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            SignMode::Smooth(tau) => {
                let t = (x / tau).tanh();
                (1.0 - t * t) / tau
            }
            SignMode::Hard => 0.0,
        }
    }
}

/// One optimization batch: embeddings (one row per item) and the index pairs
/// feeding the pairwise terms.
#[derive(Debug, Clone)]
pub struct LossBatch {
    pub embeddings: Array2<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub contrastive: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub smoothness: f64,
    pub balance: f64,
    pub unbiased: f64,
    pub contrastive: f64,
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn row_distance(m: &Array2<f64>, a: usize, b: usize) -> f64 {
    m.row(a)
        .iter()
        .zip(m.row(b).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

struct Evaluated {
    breakdown: LossBreakdown,
    dv: Option<Array2<f64>>,
}

fn evaluate(
    v: &Array2<f64>,
    batch: &LossBatch,
    bounds: &RescaleBounds,
    weights: &LossWeights,
    sign: SignMode,
    want_grad: bool,
) -> Evaluated {
    let (n, vocab) = v.dim();
    let mut dv = want_grad.then(|| Array2::<f64>::zeros((n, vocab)));
    let mut out = LossBreakdown::default();

    if !batch.pairs.is_empty() {
        let scale = 1.0 / batch.pairs.len() as f64;
        for &(a, b) in &batch.pairs {
            let du = row_distance(&batch.embeddings, a, b);
            let dvv = row_distance(v, a, b);
            let r = bounds.rescale(du) - dvv;
            out.smoothness += r.abs() * scale;
            if let Some(g) = dv.as_mut() {
                if dvv > 0.0 {
                    let coef = -sgn(r) * scale * weights.smoothness / dvv;
                    for i in 0..vocab {
                        let diff = v[[a, i]] - v[[b, i]];
                        g[[a, i]] += coef * diff;
                        g[[b, i]] -= coef * diff;
                    }
                }
            }
        }
    }

    let s = v.mapv(|x| sign.value(x));
    let row_sums = s.sum_axis(Axis(1));
    let col_sums = s.sum_axis(Axis(0));
    out.balance = row_sums.iter().map(|x| x.abs()).sum::<f64>() / (n * vocab) as f64;
    out.unbiased = col_sums.iter().map(|x| x.abs()).sum::<f64>() / (n * vocab) as f64;
    if let Some(g) = dv.as_mut() {
        let scale = 1.0 / (n * vocab) as f64;
        for r in 0..n {
            for i in 0..vocab {
                let ds = sign.derivative(v[[r, i]]);
                g[[r, i]] += scale
                    * ds
                    * (weights.balance * sgn(row_sums[r]) + weights.unbiased * sgn(col_sums[i]));
            }
        }
    }

    if !batch.contrastive.is_empty() {
        let scale = 1.0 / batch.contrastive.len() as f64;
        for &(a, b) in &batch.contrastive {
            let d = row_distance(v, a, b);
            out.contrastive += d * scale;
            if let Some(g) = dv.as_mut() {
                if d > 0.0 {
                    let coef = scale * weights.contrastive / d;
                    for i in 0..vocab {
                        let diff = v[[a, i]] - v[[b, i]];
                        g[[a, i]] += coef * diff;
                        g[[b, i]] -= coef * diff;
                    }
                }
            }
        }
    }

    out.total = weights.smoothness * out.smoothness
        + weights.balance * out.balance
        + weights.unbiased * out.unbiased
        + weights.contrastive * out.contrastive;
    Evaluated { breakdown: out, dv }
}

fn check(batch: &LossBatch, params: &MapperParams) -> Result<()> {
    let n = batch.embeddings.nrows();
    if n < 2 {
        return Err(Error::invalid("loss needs a batch of at least two items"));
    }
    if batch.embeddings.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "embedding dim {} vs mapper input {}",
            batch.embeddings.ncols(),
            params.input_dim()
        )));
    }
    if batch
        .pairs
        .iter()
        .chain(&batch.contrastive)
        .any(|&(a, b)| a >= n || b >= n)
    {
        return Err(Error::invalid("pair index out of batch range"));
    }
    Ok(())
}

/// Loss value only.
pub fn loss(
    params: &MapperParams,
    activation: Activation,
    batch: &LossBatch,
    bounds: &RescaleBounds,
    weights: &LossWeights,
    sign: SignMode,
) -> Result<LossBreakdown> {
    check(batch, params)?;
    let v = params.forward_batch(batch.embeddings.view(), activation).v;
    Ok(evaluate(&v, batch, bounds, weights, sign, false).breakdown)
}

/// Loss value with gradients for every parameter (backpropagated by hand).
pub fn loss_and_grad(
    params: &MapperParams,
    activation: Activation,
    batch: &LossBatch,
    bounds: &RescaleBounds,
    weights: &LossWeights,
    sign: SignMode,
) -> Result<(LossBreakdown, MapperParams)> {
    check(batch, params)?;
    let x: ArrayView2<f64> = batch.embeddings.view();
    let cache = params.forward_batch(x, activation);
    let eval = evaluate(&cache.v, batch, bounds, weights, sign, true);
    let dv = eval.dv.expect("gradient requested");
    let grads = params.backward(x, &cache, &dv, activation);
    Ok((eval.breakdown, grads))
}
