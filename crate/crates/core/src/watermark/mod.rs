//! Adaptive watermark generation and detection, plus the KGW baselines.
//!
//! Generation perturbs a token only when the measurement model's entropy over
//! the generated text so far reaches `alpha` (or while `t <= M`, where the
//! opening sentence keys the green list). The perturbation multiplies logits
//! by `1 + delta` on the green list derived from the preceding text. Detection
//! replays the same gate and needs neither the generation LM nor the prompt.

mod detect;
mod generate;
mod kgw;

pub use detect::{detect, green_fractions, DetectionReport, DetectionStatus, GreenFractions};
pub use generate::{generate, generate_plain, generate_with_semantics, GenerationTrace, Semantics, TokenRecord};
pub use kgw::{kgw_detect, kgw_generate, kgw_green_list, KgwParams, KgwReport, KgwScheme};

use serde::{Deserialize, Serialize};

use crate::dist::{Logits, SamplerParams};
use crate::error::{Error, Result};
use crate::semantics::GreenList;
use crate::vocab::TokenId;

/// The watermark secret together with the sampling configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkParams {
    /// Entropy threshold in nats.
    pub alpha: f64,
    pub delta: f64,
    /// Tokens `t <= M` are keyed by the opening sentence.
    pub measure_threshold: usize,
    pub opening: Vec<TokenId>,
    pub sampler: SamplerParams,
    pub max_tokens: usize,
}

impl WatermarkParams {
    pub const DEFAULT_ALPHA: f64 = 2.0;
    pub const DEFAULT_DELTA: f64 = 1.5;
    pub const DEFAULT_MEASURE_THRESHOLD: usize = 50;

    pub fn new(opening: Vec<TokenId>) -> Self {
        Self {
            alpha: Self::DEFAULT_ALPHA,
            delta: Self::DEFAULT_DELTA,
            measure_threshold: Self::DEFAULT_MEASURE_THRESHOLD,
            opening,
            sampler: SamplerParams::default(),
            max_tokens: 200,
        }
    }

    /// `delta = 0` is accepted: it is the identity perturbation.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid("delta must be finite and non-negative"));
        }
        if self.alpha.is_nan() {
            return Err(Error::invalid("alpha is NaN"));
        }
        if self.measure_threshold > 0 && self.opening.is_empty() {
            return Err(Error::invalid("opening sentence required when M > 0"));
        }
        for &id in &self.opening {
            if id as usize >= vocab_size {
                return Err(Error::TokenOutOfRange { id: id as usize, size: vocab_size });
            }
        }
        self.sampler.validate()
    }
}

/// `l_i * (1 + delta * vhat_i)`.
pub fn awts_perturb(logits: &Logits, green: &GreenList, delta: f64) -> Result<Logits> {
    if logits.len() != green.len() {
        return Err(Error::DimensionMismatch(format!(
            "logits {} vs green list {}",
            logits.len(),
            green.len()
        )));
    }
    Ok(Logits(
        logits
            .0
            .iter()
            .enumerate()
            .map(|(i, &l)| if green.contains(i as TokenId) { l * (1.0 + delta) } else { l })
            .collect(),
    ))
}

/// Per-token log likelihood-ratio approximation `l_k * delta * vhat_k`, with
/// the ratio of softmax normalizers taken as 1.
pub fn likelihood_ratio_term(logit: f64, delta: f64, green: bool) -> f64 {
    if green {
        logit * delta
    } else {
        0.0
    }
}
