use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Corpus, LanguageModel, MeasurementModel};
use crate::dist::{Logits, Probs};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NGramRole {
    Generator,
    Measurement,
    Evaluator,
}

impl NGramRole {
    pub(crate) fn code(self) -> u64 {
        match self {
            NGramRole::Generator => 0,
            NGramRole::Measurement => 1,
            NGramRole::Evaluator => 2,
        }
    }

    pub(crate) fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(NGramRole::Generator),
            1 => Some(NGramRole::Measurement),
            2 => Some(NGramRole::Evaluator),
            _ => None,
        }
    }
}

/// Continuation counts for one context; `next` is sorted by token id.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ContextCounts {
    pub total: u64,
    pub next: Vec<(TokenId, u64)>,
}

/// Add-k smoothed n-gram model.
///
/// Tables are kept for every context length `0..order`, so histories shorter
/// than `order - 1` (the start of a text) fall back to the longest context
/// available, down to the unigram table for an empty history. A full-length
/// context never seen in training gets the pure smoothing distribution,
/// which is uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    pub(crate) order: usize,
    pub(crate) k: f64,
    pub(crate) vocab_size: usize,
    pub(crate) vocab_hash: u64,
    pub(crate) role: NGramRole,
    pub(crate) tables: Vec<HashMap<Box<[TokenId]>, ContextCounts>>,
}

impl NGramModel {
    pub fn train(
        corpus: &Corpus,
        order: usize,
        k: f64,
        vocab_size: usize,
        vocab_hash: u64,
        role: NGramRole,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::invalid(format!("smoothing constant k = {k} must be > 0")));
        }
        if corpus.token_count() == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut raw: Vec<HashMap<Box<[TokenId]>, HashMap<TokenId, u64>>> =
            vec![HashMap::new(); order];
        for doc in &corpus.documents {
            let ids = &doc.ids;
            for (i, &tok) in ids.iter().enumerate() {
                if tok as usize >= vocab_size {
                    return Err(Error::TokenOutOfRange {
                        id: tok as usize,
                        size: vocab_size,
                    });
                }
                for (len, table) in raw.iter_mut().enumerate() {
                    if len > i {
                        break;
                    }
                    let ctx: Box<[TokenId]> = ids[i - len..i].into();
                    *table.entry(ctx).or_default().entry(tok).or_default() += 1;
                }
            }
        }
        let tables = raw
            .into_iter()
            .map(|table| {
                table
                    .into_iter()
                    .map(|(ctx, next)| {
                        let mut next: Vec<(TokenId, u64)> = next.into_iter().collect();
                        next.sort_unstable();
                        let total = next.iter().map(|(_, c)| c).sum();
                        (ctx, ContextCounts { total, next })
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            order,
            k,
            vocab_size,
            vocab_hash,
            role,
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn role(&self) -> NGramRole {
        self.role
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    fn lookup(&self, history: &[TokenId]) -> Option<&ContextCounts> {
        let len = history.len().min(self.order - 1);
        self.tables[len].get(&history[history.len() - len..])
    }

    /// Smoothed `P(next | history)` as a dense vector.
    pub fn next_probs(&self, history: &[TokenId]) -> Probs {
        let v = self.vocab_size;
        let (total, next) = match self.lookup(history) {
            Some(c) => (c.total as f64, c.next.as_slice()),
            None => (0.0, &[][..]),
        };
        let denom = total + self.k * v as f64;
        let mut p = vec![self.k / denom; v];
        for &(tok, c) in next {
            p[tok as usize] = (c as f64 + self.k) / denom;
        }
        Probs(p)
    }

    /// Log-probabilities shifted to zero mean over the vocabulary.
    ///
    /// The shift leaves the softmax unchanged but gives likely tokens positive
    /// and unlikely tokens negative logits, the sign convention multiplicative
    /// (temperature-style) watermarks rely on.
    pub fn next_logits(&self, history: &[TokenId]) -> Logits {
        let v = self.vocab_size;
        let (total, next) = match self.lookup(history) {
            Some(c) => (c.total as f64, c.next.as_slice()),
            None => (0.0, &[][..]),
        };
        let denom = (total + self.k * v as f64).ln();
        let floor = self.k.ln() - denom;
        let mut l = vec![floor; v];
        let mut sum = floor * (v - next.len()) as f64;
        for &(tok, c) in next {
            let lp = (c as f64 + self.k).ln() - denom;
            l[tok as usize] = lp;
            sum += lp;
        }
        let mean = sum / v as f64;
        for x in &mut l {
            *x -= mean;
        }
        Logits(l)
    }

    /// Entropy in nats of the smoothed next-token distribution, from sparse counts.
    pub fn next_entropy(&self, history: &[TokenId]) -> f64 {
        let v = self.vocab_size;
        let (total, next) = match self.lookup(history) {
            Some(c) => (c.total as f64, c.next.as_slice()),
            None => (0.0, &[][..]),
        };
        let denom = total + self.k * v as f64;
        let pf = self.k / denom;
        let mut h = -((v - next.len()) as f64) * pf * pf.ln();
        for &(_, c) in next {
            let p = (c as f64 + self.k) / denom;
            h -= p * p.ln();
        }
        h.max(0.0)
    }

    pub fn log_prob(&self, history: &[TokenId], token: TokenId) -> f64 {
        let (total, count) = match self.lookup(history) {
            Some(c) => (
                c.total as f64,
                c.next
                    .binary_search_by_key(&token, |&(t, _)| t)
                    .map(|i| c.next[i].1)
                    .unwrap_or(0),
            ),
            None => (0.0, 0),
        };
        ((count as f64 + self.k) / (total + self.k * self.vocab_size as f64)).ln()
    }

    /// `exp` of the mean negative log-likelihood of every token given its prefix.
    pub fn perplexity(&self, text: &[TokenId]) -> Result<f64> {
        if text.is_empty() {
            return Err(Error::invalid("perplexity of an empty text"));
        }
        let nll: f64 = (0..text.len())
            .map(|t| -self.log_prob(&text[..t], text[t]))
            .sum();
        Ok((nll / text.len() as f64).exp())
    }
}

impl LanguageModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&self, context: &[TokenId]) -> Logits {
        NGramModel::next_logits(self, context)
    }
}

impl MeasurementModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_probs(&self, generated: &[TokenId]) -> Probs {
        NGramModel::next_probs(self, generated)
    }

    fn entropy(&self, generated: &[TokenId]) -> f64 {
        self.next_entropy(generated)
    }
}
