use serde::{Deserialize, Serialize};

use super::SentenceEmbedder;
use crate::lm::Corpus;
use crate::rng::WatermarkRng;
use crate::vocab::TokenId;

/// Per-token probabilities of the three augmentation edits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRates {
    /// Drop the token (shortening).
    pub deletion: f64,
    /// Insert a unigram-sampled token after it (expanding).
    pub insertion: f64,
    /// Replace it by its nearest embedding-table neighbor (paraphrase surrogate).
    pub substitution: f64,
}

impl Default for AugmentRates {
    fn default() -> Self {
        Self {
            deletion: 0.1,
            insertion: 0.1,
            substitution: 0.1,
        }
    }
}

impl AugmentRates {
    pub fn none() -> Self {
        Self {
            deletion: 0.0,
            insertion: 0.0,
            substitution: 0.0,
        }
    }
}

/// Inverse-CDF sampler over corpus unigram frequencies.
#[derive(Debug, Clone)]
pub struct UnigramSampler {
    cdf: Vec<f64>,
}

impl UnigramSampler {
    pub fn from_corpus(corpus: &Corpus, vocab_size: usize) -> Self {
        let mut counts = vec![0u64; vocab_size];
        for doc in &corpus.documents {
            for &t in &doc.ids {
                counts[t as usize] += 1;
            }
        }
        Self::from_counts(&counts)
    }

    pub fn from_counts(counts: &[u64]) -> Self {
        let total: u64 = counts.iter().sum();
        let mut acc = 0u64;
        let cdf = counts
            .iter()
            .map(|&c| {
                acc += c;
                acc as f64 / total.max(1) as f64
            })
            .collect();
        Self { cdf }
    }

    pub fn sample(&self, rng: &mut WatermarkRng) -> TokenId {
        let u = rng.next_f64();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1) as TokenId
    }
}

/// Randomly shortens, expands and paraphrases `text`. Never returns an empty
/// sequence: if every token was deleted the first original token is kept.
pub fn augment(
    text: &[TokenId],
    rates: &AugmentRates,
    embedder: &SentenceEmbedder,
    unigram: &UnigramSampler,
    rng: &mut WatermarkRng,
) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(text.len() + 4);
    for &tok in text {
        if !rng.bernoulli(rates.deletion) {
            if rng.bernoulli(rates.substitution) {
                out.push(embedder.nearest_neighbor(tok));
            } else {
                out.push(tok);
            }
        }
        if rng.bernoulli(rates.insertion) {
            out.push(unigram.sample(rng));
        }
    }
    if out.is_empty() {
        if let Some(&first) = text.first() {
            out.push(first);
        }
    }
    out
}
