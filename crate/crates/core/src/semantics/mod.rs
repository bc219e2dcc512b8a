//! Semantics-keyed green lists.
//!
//! Text is embedded ([`SentenceEmbedder`]), pushed through the semantic mapping
//! network ([`SemanticMapper`]) and the resulting scaling vector is binarized
//! into a [`GreenList`]. [`SemanticKey`] bundles the two models; together with
//! the opening sentence and gate parameters it is the watermark secret.

mod augment;
mod embedder;
mod loss;
mod mapper;
mod persist;
mod train;

pub use augment::{augment, AugmentRates, UnigramSampler};
pub use embedder::{distance, frequency_weights, PrefixEmbedder, SentenceEmbedder};
pub use loss::{loss, loss_and_grad, LossBatch, LossBreakdown, LossWeights, SignMode};
pub use mapper::{binarize, Activation, GreenList, MapperParams, SemanticMapper};
pub use train::{calibrate_bounds, train_mapper, EpochLog, TrainConfig, TrainLog};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Endpoints of the linear distance rescaling `T(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleBounds {
    pub lower: f64,
    pub upper: f64,
    pub target_lower: f64,
    pub target_upper: f64,
}

impl RescaleBounds {
    pub const DEFAULT_TARGET: (f64, f64) = (-2.0, 4.0);

    pub fn new(lower: f64, upper: f64, target_lower: f64, target_upper: f64) -> Result<Self> {
        let b = Self {
            lower,
            upper,
            target_lower,
            target_upper,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.upper > self.lower
            && self.target_upper > self.target_lower
            && self.target_lower < self.lower
            && self.target_upper > self.upper;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid rescale bounds {self:?}")))
        }
    }

    /// `T(d) = (d - L) / (U - L) * (U' - L') + L'`.
    pub fn rescale(&self, d: f64) -> f64 {
        (d - self.lower) / (self.upper - self.lower) * (self.target_upper - self.target_lower)
            + self.target_lower
    }
}

/// Validating free-function form of [`RescaleBounds::rescale`].
pub fn rescale_distance(d: f64, bounds: &RescaleBounds) -> Result<f64> {
    bounds.validate()?;
    Ok(bounds.rescale(d))
}

/// Embedder plus mapper: everything needed to turn text into a green list.
#[derive(Debug, Clone)]
pub struct SemanticKey {
    pub embedder: SentenceEmbedder,
    pub mapper: SemanticMapper,
}

impl SemanticKey {
    pub fn new(embedder: SentenceEmbedder, mapper: SemanticMapper) -> Result<Self> {
        if embedder.dim() != mapper.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "embedder dim {} vs mapper input {}",
                embedder.dim(),
                mapper.input_dim()
            )));
        }
        if embedder.seed() != mapper.embedder_seed || embedder.token_weights() != mapper.token_weights.as_deref() {
            return Err(Error::invalid("embedder does not match the seed and weights recorded in the mapper"));
        }
        if embedder.vocab_size() != mapper.vocab_size() {
            return Err(Error::DimensionMismatch(format!(
                "embedder vocab {} vs mapper output {}",
                embedder.vocab_size(),
                mapper.vocab_size()
            )));
        }
        Ok(Self { embedder, mapper })
    }

    /// Rebuilds the embedder from the seed and token weights stored in the mapper.
    pub fn from_mapper(mapper: SemanticMapper) -> Result<Self> {
        let mut embedder = SentenceEmbedder::new(mapper.vocab_size(), mapper.input_dim(), mapper.embedder_seed());
        if let Some(w) = &mapper.token_weights {
            embedder = embedder.with_token_weights(w.clone())?;
        }
        Self::new(embedder, mapper)
    }

    pub fn vocab_size(&self) -> usize {
        self.mapper.vocab_size()
    }

    pub fn scaling_vector(&self, text: &[TokenId]) -> Vec<f64> {
        self.mapper.forward(&self.embedder.embed(text))
    }

    /// SLSVE: embed, map, binarize.
    pub fn green_list(&self, text: &[TokenId]) -> GreenList {
        self.green_list_for_embedding(&self.embedder.embed(text))
    }

    pub fn green_list_for_embedding(&self, u: &[f64]) -> GreenList {
        binarize(&self.mapper.forward(u))
    }
}
