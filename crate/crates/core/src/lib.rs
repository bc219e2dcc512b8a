//! Adaptive text watermarking at desk scale.
//!
//! The crate bundles everything needed to embed and detect an entropy-gated,
//! semantics-keyed watermark in autoregressive text:
//!
//! - [`dist`]: softmax, Shannon entropy, top-K/top-p filtering and seeded sampling.
//! - [`vocab`] and [`lm`]: shared vocabulary, tokenization and add-k smoothed n-gram models
//!   that stand in for the generation LM, the measurement model and the perplexity evaluator.
//! - [`semantics`]: sentence embedder, semantic mapping network, its training loss and SGD loop.
//! - [`watermark`]: adaptive generation and the model-agnostic detector, plus KGW-0/KGW-1 baselines.
//! - [`redteam`]: synthetic paraphrase attacks and frequency-analysis spoofing.
//! - [`eval`]: ROC-AUC, best F1, TPR@FPR, AWR, repetition rate and the experiment runner.

pub mod dist;
pub mod error;
pub mod eval;
pub mod lm;
pub mod redteam;
pub mod rng;
pub mod semantics;
pub mod synth;
pub mod vocab;
pub mod watermark;

pub use dist::{Logits, Probs, SamplerParams};
pub use error::{Error, Result};
pub use lm::{Corpus, NGramModel, NGramRole};
pub use rng::WatermarkRng;
pub use semantics::{SemanticKey, SemanticMapper, SentenceEmbedder};
pub use vocab::{TokenId, TokenSeq, Tokenizer, Vocabulary};
pub use watermark::{DetectionReport, GenerationTrace, KgwParams, WatermarkParams};
