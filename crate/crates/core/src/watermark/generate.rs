use serde::{Deserialize, Serialize};

use super::{awts_perturb, WatermarkParams};
use crate::dist::{filter_topk_topp, sample, softmax, SamplerParams};
use crate::error::{Error, Result};
use crate::lm::{LanguageModel, MeasurementModel};
use crate::rng::WatermarkRng;
use crate::semantics::{GreenList, PrefixEmbedder, SemanticKey};
use crate::vocab::TokenId;

/// One generation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token: TokenId,
    pub watermarked: bool,
    /// Measurement-model entropy; not computed while `t <= M`.
    pub entropy: Option<f64>,
    /// Green list used for the perturbation, absent when unwatermarked.
    pub green_list: Option<GreenList>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub prompt: Vec<TokenId>,
    pub records: Vec<TokenRecord>,
}

impl GenerationTrace {
    pub fn tokens(&self) -> Vec<TokenId> {
        self.records.iter().map(|r| r.token).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Zero-based indices of watermarked tokens.
    pub fn watermarked_positions(&self) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.watermarked)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn watermarked_count(&self) -> usize {
        self.records.iter().filter(|r| r.watermarked).count()
    }
}

/// Where the green list comes from once `t > M`.
#[derive(Debug, Clone, Copy)]
pub enum Semantics<'a> {
    /// Embedding of the text generated so far (the normal scheme).
    Free,
    /// One embedding in place of the generated-text embedding at every
    /// step `t > M`; the opening sentence still keys `t <= M`. This is the
    /// strengthened spoofing setting where the attacker pins the semantics.
    Fixed(&'a [f64]),
    /// Like `Fixed`, but the pinned embedding also replaces the opening
    /// sentence, so a single green list keys every step.
    FixedAll(&'a [f64]),
}

pub(crate) fn check_tokens(ids: &[TokenId], vocab_size: usize) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= vocab_size) {
        Some(&id) => Err(Error::TokenOutOfRange { id: id as usize, size: vocab_size }),
        None => Ok(()),
    }
}

pub(crate) fn check_sizes(parts: &[(&str, usize)]) -> Result<()> {
    let (first, n) = parts[0];
    for &(name, m) in &parts[1..] {
        if m != n {
            return Err(Error::DimensionMismatch(format!("{first} has |V|={n} but {name} has |V|={m}")));
        }
    }
    Ok(())
}

/// Adaptive watermark generation.
pub fn generate(
    lm: &dyn LanguageModel,
    mm: &dyn MeasurementModel,
    key: &SemanticKey,
    prompt: &[TokenId],
    wp: &WatermarkParams,
    rng: &mut WatermarkRng,
) -> Result<GenerationTrace> {
    generate_with_semantics(lm, mm, key, prompt, wp, Semantics::Free, rng)
}

pub fn generate_with_semantics(
    lm: &dyn LanguageModel,
    mm: &dyn MeasurementModel,
    key: &SemanticKey,
    prompt: &[TokenId],
    wp: &WatermarkParams,
    semantics: Semantics<'_>,
    rng: &mut WatermarkRng,
) -> Result<GenerationTrace> {
    let v = key.vocab_size();
    check_sizes(&[("mapper", v), ("generator", lm.vocab_size()), ("measurement model", mm.vocab_size())])?;
    wp.validate(v)?;
    check_tokens(prompt, v)?;
    if let Semantics::Fixed(u) | Semantics::FixedAll(u) = semantics {
        if u.len() != key.embedder.dim() {
            return Err(Error::DimensionMismatch("fixed embedding length".into()));
        }
    }

    let opening = match semantics {
        Semantics::FixedAll(u) => key.green_list_for_embedding(u),
        Semantics::Free | Semantics::Fixed(_) => key.green_list(&wp.opening),
    };
    let pinned = match semantics {
        Semantics::Fixed(u) | Semantics::FixedAll(u) => Some(key.green_list_for_embedding(u)),
        Semantics::Free => None,
    };
    let mut context = prompt.to_vec();
    let mut prefix = PrefixEmbedder::new(&key.embedder);
    let mut records = Vec::with_capacity(wp.max_tokens);

    for t in 1..=wp.max_tokens {
        let (watermarked, entropy, green_list) = if t <= wp.measure_threshold {
            (true, None, Some(opening.clone()))
        } else {
            let h = mm.entropy(&context[prompt.len()..]);
            if h >= wp.alpha {
                let g = match &pinned {
                    Some(g) => g.clone(),
                    None => key.green_list_for_embedding(&prefix.embedding()),
                };
                (true, Some(h), Some(g))
            } else {
                (false, Some(h), None)
            }
        };

        let mut logits = lm.next_logits(&context);
        if let Some(g) = &green_list {
            logits = awts_perturb(&logits, g, wp.delta)?;
        }
        let probs = filter_topk_topp(&softmax(&logits)?, &wp.sampler)?;
        let token = sample(&probs, rng);

        context.push(token);
        prefix.push(token);
        records.push(TokenRecord {
            token,
            watermarked,
            entropy,
            green_list,
        });
    }
    Ok(GenerationTrace {
        prompt: prompt.to_vec(),
        records,
    })
}

/// Unwatermarked generation with the same sampler and RNG consumption.
pub fn generate_plain(
    lm: &dyn LanguageModel,
    prompt: &[TokenId],
    sampler: &SamplerParams,
    max_tokens: usize,
    rng: &mut WatermarkRng,
) -> Result<Vec<TokenId>> {
    sampler.validate()?;
    check_tokens(prompt, lm.vocab_size())?;
    let mut context = prompt.to_vec();
    for _ in 0..max_tokens {
        let probs = filter_topk_topp(&softmax(&lm.next_logits(&context))?, sampler)?;
        context.push(sample(&probs, rng));
    }
    Ok(context.split_off(prompt.len()))
}
