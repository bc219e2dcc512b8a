use serde::{Deserialize, Serialize};

use crate::dist::sample;
use crate::error::{Error, Result};
use crate::lm::MeasurementModel;
use crate::rng::WatermarkRng;
use crate::semantics::SentenceEmbedder;
use crate::vocab::TokenId;

/// Token-edit paraphrase surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParaphraseParams {
    /// Replace a token by its nearest neighbor in the embedding table.
    pub substitution: f64,
    pub deletion: f64,
    /// Insert a token sampled from the measurement model after a kept token.
    pub insertion: f64,
    /// Tokens move at most this many places.
    pub shuffle_window: usize,
    pub seed: u64,
}

impl Default for ParaphraseParams {
    /// 20% combined edit rate.
    fn default() -> Self {
        Self {
            substitution: 0.1,
            deletion: 0.05,
            insertion: 0.05,
            shuffle_window: 0,
            seed: 0,
        }
    }
}

impl ParaphraseParams {
    pub fn identity() -> Self {
        Self {
            substitution: 0.0,
            deletion: 0.0,
            insertion: 0.0,
            shuffle_window: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("substitution", self.substitution),
            ("deletion", self.deletion),
            ("insertion", self.insertion),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Deletes, substitutes and inserts tokens, then applies a bounded local
/// shuffle: token `i` gets sort key `i + U(0, window + 1)`. The result is
/// never empty; if everything was deleted the first original token is kept.
pub fn paraphrase_attack(
    text: &[TokenId],
    pp: &ParaphraseParams,
    embedder: &SentenceEmbedder,
    mm: &dyn MeasurementModel,
) -> Result<Vec<TokenId>> {
    pp.validate()?;
    if text.is_empty() {
        return Err(Error::invalid("cannot paraphrase an empty text"));
    }
    let v = embedder.vocab_size();
    if let Some(&id) = text.iter().find(|&&id| id as usize >= v) {
        return Err(Error::TokenOutOfRange { id: id as usize, size: v });
    }
    let mut rng = WatermarkRng::new(pp.seed);
    let mut out = Vec::with_capacity(text.len() + text.len() / 8 + 1);
    for &tok in text {
        if rng.bernoulli(pp.deletion) {
            continue;
        }
        out.push(if rng.bernoulli(pp.substitution) {
            embedder.nearest_neighbor(tok)
        } else {
            tok
        });
        if rng.bernoulli(pp.insertion) {
            let probs = mm.next_probs(&out);
            out.push(sample(&probs, &mut rng));
        }
    }
    if out.is_empty() {
        out.push(text[0]);
    }
    if pp.shuffle_window > 0 {
        let span = (pp.shuffle_window + 1) as f64;
        let mut keyed: Vec<(f64, TokenId)> = out
            .iter()
            .enumerate()
            .map(|(i, &t)| (i as f64 + rng.next_f64() * span, t))
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
        out = keyed.into_iter().map(|(_, t)| t).collect();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Probs;

    struct Uniform(usize);

    impl MeasurementModel for Uniform {
        fn vocab_size(&self) -> usize {
            self.0
        }

        fn next_probs(&self, _generated: &[TokenId]) -> Probs {
            Probs::uniform(self.0)
        }
    }

    fn text() -> Vec<TokenId> {
        (0..40).map(|i| (i * 7 % 30) as TokenId).collect()
    }

    #[test]
    fn zero_rates_are_identity() {
        let e = SentenceEmbedder::new(30, 8, 1);
        let out = paraphrase_attack(&text(), &ParaphraseParams::identity(), &e, &Uniform(30)).unwrap();
        assert_eq!(out, text());
    }

    #[test]
    fn full_substitution_replaces_every_position() {
        let e = SentenceEmbedder::new(30, 8, 1);
        let pp = ParaphraseParams {
            substitution: 1.0,
            ..ParaphraseParams::identity()
        };
        let out = paraphrase_attack(&text(), &pp, &e, &Uniform(30)).unwrap();
        assert_eq!(out.len(), text().len());
        assert!(out.iter().zip(text()).all(|(a, b)| *a != b));
    }

    #[test]
    fn deterministic_and_clamped() {
        let e = SentenceEmbedder::new(30, 8, 1);
        let pp = ParaphraseParams {
            shuffle_window: 3,
            seed: 9,
            ..ParaphraseParams::default()
        };
        let a = paraphrase_attack(&text(), &pp, &e, &Uniform(30)).unwrap();
        assert_eq!(a, paraphrase_attack(&text(), &pp, &e, &Uniform(30)).unwrap());
        let all = ParaphraseParams {
            deletion: 1.0,
            ..ParaphraseParams::identity()
        };
        assert_eq!(paraphrase_attack(&text(), &all, &e, &Uniform(30)).unwrap(), vec![text()[0]]);
    }

    #[test]
    fn shuffle_moves_tokens_at_most_window() {
        let e = SentenceEmbedder::new(40, 8, 1);
        let src: Vec<TokenId> = (0..40).collect();
        for seed in 0..20 {
            let pp = ParaphraseParams {
                shuffle_window: 2,
                seed,
                ..ParaphraseParams::identity()
            };
            let out = paraphrase_attack(&src, &pp, &e, &Uniform(40)).unwrap();
            for (i, &t) in out.iter().enumerate() {
                assert!((i as i64 - t as i64).abs() <= 2);
            }
        }
    }

    #[test]
    fn rejects_bad_rates() {
        let e = SentenceEmbedder::new(30, 8, 1);
        let pp = ParaphraseParams {
            deletion: 1.5,
            ..ParaphraseParams::identity()
        };
        assert!(paraphrase_attack(&text(), &pp, &e, &Uniform(30)).is_err());
    }
}
