use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentRates, UnigramSampler};
use super::embedder::{distance, frequency_weights, SentenceEmbedder};
use super::loss::{loss, loss_and_grad, LossBatch, LossBreakdown, LossWeights, SignMode};
use super::mapper::{Activation, MapperParams, SemanticMapper};
use super::{RescaleBounds, SemanticKey};
use crate::error::{Error, Result};
use crate::lm::Corpus;
use crate::rng::{derive_seed, WatermarkRng};
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weights: LossWeights,
    /// Temperature of the `tanh` sign surrogate.
    pub tau: f64,
    pub augment: AugmentRates,
    /// Pairs sampled per step for the smoothness term.
    pub pairs_per_step: usize,
    /// Random document pairs used to estimate the distance range `[0, U]`.
    pub calibration_pairs: usize,
    pub rescale_target: (f64, f64),
    /// Smoothing constant `a` of the embedder's inverse-frequency token
    /// weights `a / (a + p(w))`; `None` gives every token weight 1.
    pub token_weighting: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embed_dim: SentenceEmbedder::DEFAULT_DIM,
            hidden: 256,
            activation: Activation::Relu,
            batch_size: 128,
            learning_rate: 1e-2,
            epochs: 20,
            weights: LossWeights::default(),
            tau: 0.1,
            augment: AugmentRates::default(),
            pairs_per_step: 512,
            calibration_pairs: 1000,
            rescale_target: RescaleBounds::DEFAULT_TARGET,
            token_weighting: Some(1e-3),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if self.token_weighting.is_some_and(|a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::invalid("token weighting constant must be positive"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau must be positive"));
        }
        if !(self.learning_rate > 0.0) || self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::invalid("learning rate, embed_dim and hidden must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub eval: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Loss on the fixed evaluation batch before any update.
    pub initial: LossBreakdown,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn final_eval(&self) -> LossBreakdown {
        self.epochs.last().map(|e| e.eval).unwrap_or(self.initial)
    }
}

/// `L = 0` and `U` = largest distance among `n_pairs` random embedding pairs.
pub fn calibrate_bounds(
    embeddings: &[Vec<f64>],
    n_pairs: usize,
    target: (f64, f64),
    rng: &mut WatermarkRng,
) -> Result<RescaleBounds> {
    if embeddings.len() < 2 {
        return Err(Error::invalid("calibration needs at least two embeddings"));
    }
    let mut upper: f64 = 0.0;
    for _ in 0..n_pairs.max(1) {
        let a = rng.below(embeddings.len());
        let mut b = rng.below(embeddings.len() - 1);
        if b >= a {
            b += 1;
        }
        upper = upper.max(distance(&embeddings[a], &embeddings[b])?);
    }
    if upper <= 0.0 {
        return Err(Error::invalid("all calibration embeddings coincide"));
    }
    RescaleBounds::new(0.0, upper, target.0, target.1)
}

struct BatchBuilder<'a> {
    embedder: &'a SentenceEmbedder,
    unigram: &'a UnigramSampler,
    rates: AugmentRates,
    pairs_per_step: usize,
}

impl BatchBuilder<'_> {
    /// Rows `0..n` are the originals, rows `n..2n` their augmentations.
    fn build(&self, docs: &[&[TokenId]], rng: &mut WatermarkRng) -> LossBatch {
        let n = docs.len();
        let dim = self.embedder.dim();
        let mut embeddings = Array2::zeros((2 * n, dim));
        for (i, doc) in docs.iter().enumerate() {
            let aug = augment(doc, &self.rates, self.embedder, self.unigram, rng);
            for (j, x) in self.embedder.embed(doc).into_iter().enumerate() {
                embeddings[[i, j]] = x;
            }
            for (j, x) in self.embedder.embed(&aug).into_iter().enumerate() {
                embeddings[[n + i, j]] = x;
            }
        }
        let items = 2 * n;
        let all_pairs = items * (items - 1) / 2;
        let pairs = if all_pairs <= self.pairs_per_step {
            (0..items)
                .flat_map(|a| (a + 1..items).map(move |b| (a, b)))
                .collect()
        } else {
            (0..self.pairs_per_step)
                .map(|_| {
                    let a = rng.below(items);
                    let mut b = rng.below(items - 1);
                    if b >= a {
                        b += 1;
                    }
                    (a, b)
                })
                .collect()
        };
        let contrastive = (0..n).map(|i| (i, n + i)).collect();
        LossBatch {
            embeddings,
            pairs,
            contrastive,
        }
    }
}

fn unigram_counts(corpus: &Corpus, vocab_size: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; vocab_size];
    for &t in corpus.documents.iter().flat_map(|d| &d.ids) {
        *counts
            .get_mut(t as usize)
            .ok_or(Error::TokenOutOfRange { id: t as usize, size: vocab_size })? += 1;
    }
    Ok(counts)
}

/// Minibatch SGD on the four-term loss with augmented data.
///
/// Deterministic for a fixed corpus and config: shuffling, augmentation and
/// pair sampling all derive from `cfg.seed`. Weights are rounded to `f32` at
/// initialization and after training so the in-memory mapper equals the one
/// read back from disk.
pub fn train_mapper(
    corpus: &Corpus,
    vocab_size: usize,
    vocab_hash: u64,
    cfg: &TrainConfig,
) -> Result<(SemanticKey, TrainLog)> {
    cfg.validate()?;
    let docs: Vec<&[TokenId]> = corpus
        .documents
        .iter()
        .filter(|d| !d.is_empty())
        .map(|d| d.ids.as_slice())
        .collect();
    if docs.len() < 2 {
        return Err(Error::EmptyCorpus);
    }

    let embedder_seed = derive_seed(cfg.seed, "embedder");
    let counts = unigram_counts(corpus, vocab_size)?;
    let unigram = UnigramSampler::from_counts(&counts);
    let mut embedder = SentenceEmbedder::new(vocab_size, cfg.embed_dim, embedder_seed);
    let token_weights = cfg.token_weighting.map(|a| frequency_weights(&counts, a));
    if let Some(w) = &token_weights {
        embedder = embedder.with_token_weights(w.clone())?;
    }

    let doc_embeddings: Vec<Vec<f64>> = docs.iter().map(|d| embedder.embed(d)).collect();
    let bounds = calibrate_bounds(
        &doc_embeddings,
        cfg.calibration_pairs,
        cfg.rescale_target,
        &mut WatermarkRng::derived(cfg.seed, "calibrate"),
    )?;

    let mut params = MapperParams::random(
        cfg.embed_dim,
        cfg.hidden,
        vocab_size,
        derive_seed(cfg.seed, "mapper-init"),
    );
    params.round_to_f32();

    let builder = BatchBuilder {
        embedder: &embedder,
        unigram: &unigram,
        rates: cfg.augment,
        pairs_per_step: cfg.pairs_per_step,
    };
    let sign = SignMode::Smooth(cfg.tau);
    let eval_docs: Vec<&[TokenId]> = docs.iter().take(cfg.batch_size.max(2)).copied().collect();
    let eval_batch = builder.build(&eval_docs, &mut WatermarkRng::derived(cfg.seed, "eval-batch"));
    let eval = |p: &MapperParams| loss(p, cfg.activation, &eval_batch, &bounds, &cfg.weights, sign);

    let initial = eval(&params)?;
    let mut log = TrainLog {
        initial,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut rng = WatermarkRng::derived(cfg.seed, "mapper-train");
    let mut order: Vec<usize> = (0..docs.len()).collect();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let batch_docs: Vec<&[TokenId]> = chunk.iter().map(|&i| docs[i]).collect();
            let batch = builder.build(&batch_docs, &mut rng);
            let (l, grads) = loss_and_grad(&params, cfg.activation, &batch, &bounds, &cfg.weights, sign)?;
            if !l.total.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: l.total });
            }
            params.add_scaled(&grads, -cfg.learning_rate);
            if !params.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: f64::NAN });
            }
            total += l.total;
            steps += 1;
        }
        params.round_to_f32();
        let e = eval(&params)?;
        log::info!(
            "mapper epoch {epoch}: train {:.5} eval {:.5} (smooth {:.4} bal {:.4} unb {:.4} con {:.4})",
            total / steps.max(1) as f64,
            e.total,
            e.smoothness,
            e.balance,
            e.unbiased,
            e.contrastive
        );
        log.epochs.push(EpochLog {
            epoch,
            mean_train_loss: total / steps.max(1) as f64,
            eval: e,
        });
    }

    let mapper = SemanticMapper {
        params,
        activation: cfg.activation,
        bounds,
        embedder_seed,
        token_weights,
        vocab_hash,
    };
    Ok((SemanticKey::new(embedder, mapper)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SyntheticCorpus;
    use crate::vocab::{Tokenizer, Vocabulary};

    fn corpus() -> (Vocabulary, Corpus) {
        let text = SyntheticCorpus::default().generate(120, 5).join("\n");
        let v = Vocabulary::build(text.lines(), Tokenizer::Whitespace, 5000).unwrap();
        let c = Corpus::from_text(&text, &v, Tokenizer::Whitespace).unwrap();
        (v, c)
    }

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            embed_dim: 16,
            hidden: 32,
            batch_size: 32,
            epochs: 3,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (v, c) = corpus();
        let cfg = TrainConfig { epochs: 0, ..small_cfg(1) };
        let (key, log) = train_mapper(&c, v.len(), v.hash(), &cfg).unwrap();
        let mut init = MapperParams::random(16, 32, v.len(), derive_seed(1, "mapper-init"));
        init.round_to_f32();
        assert_eq!(key.mapper.params, init);
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let (v, c) = corpus();
        let (a, la) = train_mapper(&c, v.len(), v.hash(), &small_cfg(2)).unwrap();
        let (b, lb) = train_mapper(&c, v.len(), v.hash(), &small_cfg(2)).unwrap();
        assert_eq!(a.mapper, b.mapper);
        assert_eq!(la, lb);
    }

    #[test]
    fn loss_decreases_median_over_seeds() {
        let (v, c) = corpus();
        let mut improved = 0;
        for seed in 0..3 {
            let cfg = TrainConfig { epochs: 8, ..small_cfg(seed) };
            let (_, log) = train_mapper(&c, v.len(), v.hash(), &cfg).unwrap();
            if log.final_eval().total <= log.initial.total {
                improved += 1;
            }
        }
        assert!(improved >= 2);
    }

    #[test]
    fn rejects_tiny_batch() {
        let (v, c) = corpus();
        let cfg = TrainConfig { batch_size: 1, ..small_cfg(0) };
        assert!(train_mapper(&c, v.len(), v.hash(), &cfg).is_err());
    }

    #[test]
    fn calibration_sets_valid_bounds() {
        let e = SentenceEmbedder::new(30, 8, 3);
        let embs: Vec<Vec<f64>> = (0..30u32).map(|i| e.embed(&[i])).collect();
        let b = calibrate_bounds(&embs, 200, (-2.0, 4.0), &mut WatermarkRng::new(1)).unwrap();
        assert_eq!(b.lower, 0.0);
        assert!(b.upper > 0.0 && b.upper <= 2.0);
    }
}
