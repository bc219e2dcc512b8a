//! Distribution mathematics shared by every model and watermark.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::WatermarkRng;
use crate::vocab::TokenId;

/// Unnormalized log-scores over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

/// A probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Probs(pub Vec<f64>);

impl Logits {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Probs {
    pub const TOLERANCE: f64 = 1e-9;

    /// Validates non-negativity and unit mass.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        if values.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        Ok(Self(values))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, at: usize) -> Self {
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub top_k: usize,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            top_k: 50,
            top_p: 0.9,
            seed: 0,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }

    pub fn rng(&self) -> WatermarkRng {
        WatermarkRng::new(self.seed)
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &Logits) -> Result<Probs> {
    if logits.is_empty() {
        return Err(Error::invalid("empty logits"));
    }
    if logits.0.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("non-finite logit"));
    }
    Ok(softmax_unchecked(&logits.0))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Probs {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Probs(out)
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
pub fn shannon_entropy(probs: &Probs) -> f64 {
    let h: f64 = probs
        .0
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// Descending-probability order, ties broken by lower token index.
fn rank_cmp(probs: &[f64], a: usize, b: usize) -> std::cmp::Ordering {
    probs[b].total_cmp(&probs[a]).then(a.cmp(&b))
}

/// Keeps the `top_k` most probable tokens, then the shortest prefix of those
/// (by descending probability) whose cumulative mass reaches `top_p`, and
/// renormalizes. Mass is accumulated from the unrenormalized input.
pub fn filter_topk_topp(probs: &Probs, sp: &SamplerParams) -> Result<Probs> {
    sp.validate()?;
    let p = &probs.0;
    let n = p.len();
    let k = sp.top_k.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    if k < n {
        order.select_nth_unstable_by(k - 1, |&a, &b| rank_cmp(p, a, b));
        order.truncate(k);
    }
    order.sort_unstable_by(|&a, &b| rank_cmp(p, a, b));

    let mut keep = order.len();
    let mut cum = 0.0;
    for (i, &idx) in order.iter().enumerate() {
        cum += p[idx];
        if cum >= sp.top_p {
            keep = i + 1;
            break;
        }
    }
    order.truncate(keep);

    let support = p.iter().filter(|&&x| x > 0.0).count();
    let kept_support = order.iter().filter(|&&i| p[i] > 0.0).count();
    if kept_support == support {
        return Ok(probs.clone());
    }

    let mass: f64 = order.iter().map(|&i| p[i]).sum();
    let mut out = vec![0.0; n];
    for &i in &order {
        out[i] = p[i] / mass;
    }
    Ok(Probs(out))
}

/// Draws one token by inverse-CDF on a single uniform from `rng`.
///
/// Exactly one `next_u64` is consumed per call, so two samplers fed the same
/// distributions stay in lock-step.
pub fn sample(probs: &Probs, rng: &mut WatermarkRng) -> TokenId {
    let u = rng.next_f64();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.0.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last_positive = i;
            if u < cum {
                return i as TokenId;
            }
        }
    }
    last_positive as TokenId
}

/// Index of the largest entry (lowest index on ties).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
