//! KGW-style baselines: additive bias on a pseudo-random green list.

use serde::{Deserialize, Serialize};

use super::generate::check_tokens;
use super::DetectionStatus;
use crate::dist::{filter_topk_topp, sample, softmax, Logits, SamplerParams};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::rng::{mix64, WatermarkRng};
use crate::semantics::GreenList;
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgwScheme {
    /// One green list for every position.
    Kgw0,
    /// Green list seeded by the previous token.
    Kgw1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgwParams {
    pub gamma: f64,
    pub delta_add: f64,
    pub scheme: KgwScheme,
    pub key: u64,
    pub sampler: SamplerParams,
    pub max_tokens: usize,
}

impl KgwParams {
    pub fn new(scheme: KgwScheme, key: u64) -> Self {
        Self {
            gamma: 0.5,
            delta_add: 2.0,
            scheme,
            key,
            sampler: SamplerParams::default(),
            max_tokens: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1)"));
        }
        if !(self.delta_add >= 0.0) || !self.delta_add.is_finite() {
            return Err(Error::invalid("delta_add must be finite and non-negative"));
        }
        self.sampler.validate()
    }

    /// Seed of the green-list shuffle: `mix64(key)` for KGW-0 and
    /// `mix64(key ^ mix64(prev + 1))` for KGW-1.
    fn list_seed(&self, prev: Option<TokenId>) -> u64 {
        match (self.scheme, prev) {
            (KgwScheme::Kgw1, Some(p)) => mix64(self.key ^ mix64(p as u64 + 1)),
            _ => mix64(self.key),
        }
    }
}

/// The first `round(gamma |V|)` entries of a seeded Fisher-Yates shuffle of
/// `0..|V|`. `prev` is ignored by KGW-0.
pub fn kgw_green_list(kp: &KgwParams, vocab_size: usize, prev: Option<TokenId>) -> GreenList {
    let mut perm: Vec<usize> = (0..vocab_size).collect();
    WatermarkRng::new(kp.list_seed(prev)).shuffle(&mut perm);
    let size = (kp.gamma * vocab_size as f64).round() as usize;
    let mut bits = vec![false; vocab_size];
    for &i in &perm[..size.min(vocab_size)] {
        bits[i] = true;
    }
    GreenList::from_bools(bits)
}

fn bias(logits: &mut Logits, green: &GreenList, delta_add: f64) {
    for (i, l) in logits.0.iter_mut().enumerate() {
        if green.contains(i as TokenId) {
            *l += delta_add;
        }
    }
}

/// KGW generation. Under KGW-1 the first token is keyed by the last prompt
/// token, or left unbiased when the prompt is empty.
pub fn kgw_generate(
    lm: &dyn LanguageModel,
    prompt: &[TokenId],
    kp: &KgwParams,
    rng: &mut WatermarkRng,
) -> Result<Vec<TokenId>> {
    kp.validate()?;
    let v = lm.vocab_size();
    check_tokens(prompt, v)?;
    let fixed = kgw_green_list(kp, v, None);
    let mut context = prompt.to_vec();
    for _ in 0..kp.max_tokens {
        let mut logits = lm.next_logits(&context);
        match kp.scheme {
            KgwScheme::Kgw0 => bias(&mut logits, &fixed, kp.delta_add),
            KgwScheme::Kgw1 => {
                if let Some(&prev) = context.last() {
                    bias(&mut logits, &kgw_green_list(kp, v, Some(prev)), kp.delta_add);
                }
            }
        }
        let probs = filter_topk_topp(&softmax(&logits)?, &kp.sampler)?;
        context.push(sample(&probs, rng));
    }
    Ok(context.split_off(prompt.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgwReport {
    pub status: DetectionStatus,
    /// Fraction of scored tokens that are green.
    pub score: Option<f64>,
    pub scored: usize,
    pub green: usize,
}

/// Green-token fraction. KGW-1 cannot score the first token (its
/// predecessor is in the unseen prompt), so texts shorter than 2 tokens are
/// inconclusive.
pub fn kgw_detect(text: &[TokenId], kp: &KgwParams, vocab_size: usize) -> Result<KgwReport> {
    kp.validate()?;
    check_tokens(text, vocab_size)?;
    let (scored, green) = match kp.scheme {
        KgwScheme::Kgw0 => {
            let g = kgw_green_list(kp, vocab_size, None);
            (text.len(), text.iter().filter(|&&t| g.contains(t)).count())
        }
        KgwScheme::Kgw1 => {
            let green = text
                .windows(2)
                .filter(|w| kgw_green_list(kp, vocab_size, Some(w[0])).contains(w[1]))
                .count();
            (text.len().saturating_sub(1), green)
        }
    };
    let min_len = match kp.scheme {
        KgwScheme::Kgw0 => 1,
        KgwScheme::Kgw1 => 2,
    };
    Ok(if text.len() < min_len {
        KgwReport {
            status: DetectionStatus::Inconclusive,
            score: None,
            scored: 0,
            green: 0,
        }
    } else {
        KgwReport {
            status: DetectionStatus::Ok,
            score: Some(green as f64 / scored as f64),
            scored,
            green,
        }
    })
}
