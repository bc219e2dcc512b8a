//! Desk-scale probability models.
//!
//! One add-k smoothed n-gram implementation plays three roles: the generation
//! LM, the (smaller) measurement model whose entropy gates watermarking, and
//! a held-out evaluator for perplexity.

mod corpus;
mod ngram;
mod persist;

pub use corpus::Corpus;
pub use ngram::{NGramModel, NGramRole};

use crate::dist::{Logits, Probs};
use crate::vocab::TokenId;

/// Conditional next-token model over a shared vocabulary.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// `context` is the full history (prompt followed by generated tokens).
    fn next_logits(&self, context: &[TokenId]) -> Logits;
}

/// Entropy oracle for the watermark gate.
///
/// It only ever sees generated (or candidate) tokens: there is no way to hand
/// it a prompt, which keeps detection prompt-agnostic by construction.
pub trait MeasurementModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn next_probs(&self, generated: &[TokenId]) -> Probs;

    /// Shannon entropy (nats) of the next-token distribution after `generated`.
    fn entropy(&self, generated: &[TokenId]) -> f64 {
        crate::dist::shannon_entropy(&self.next_probs(generated))
    }
}
