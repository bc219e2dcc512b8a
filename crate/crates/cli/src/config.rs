use std::path::{Path, PathBuf};

use adawm::redteam::{ParaphraseParams, SpoofConfig};
use adawm::semantics::TrainConfig;
use adawm::synth::SyntheticCorpus;
use adawm::watermark::{KgwParams, KgwScheme, WatermarkParams};
use adawm::{SamplerParams, Tokenizer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Adaptive,
    Kgw0,
    Kgw1,
    /// Unwatermarked sampling.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: PathBuf,
    /// Disjoint documents for the perplexity evaluator; the held-out split is used when absent.
    pub reference_corpus: Option<PathBuf>,
    /// One human text per line, replacing generated human samples in `evaluate`.
    pub human: Option<PathBuf>,
    pub out: PathBuf,
    pub vocab: Option<PathBuf>,
    pub generator: Option<PathBuf>,
    pub measurement: Option<PathBuf>,
    pub evaluator: Option<PathBuf>,
    pub mapper: Option<PathBuf>,
    pub opening: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus.txt".into(),
            reference_corpus: None,
            human: None,
            out: "out".into(),
            vocab: None,
            generator: None,
            measurement: None,
            evaluator: None,
            mapper: None,
            opening: None,
        }
    }
}

impl Paths {
    fn or_out(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out.join(name))
    }

    pub fn vocab(&self) -> PathBuf {
        self.or_out(&self.vocab, "vocab.txt")
    }

    pub fn generator(&self) -> PathBuf {
        self.or_out(&self.generator, "generator.ngram")
    }

    pub fn measurement(&self) -> PathBuf {
        self.or_out(&self.measurement, "measurement.ngram")
    }

    pub fn evaluator(&self) -> PathBuf {
        self.or_out(&self.evaluator, "evaluator.ngram")
    }

    pub fn mapper(&self) -> PathBuf {
        self.or_out(&self.mapper, "mapper.bin")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSection {
    pub docs: usize,
    pub reference_docs: usize,
    pub generator: SyntheticCorpus,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            docs: 6000,
            reference_docs: 20000,
            generator: SyntheticCorpus::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmSection {
    pub generator_order: usize,
    pub measurement_order: usize,
    pub evaluator_order: usize,
    pub k: f64,
    pub heldout_fraction: f64,
    pub max_vocab: usize,
}

impl Default for LmSection {
    fn default() -> Self {
        Self {
            generator_order: 3,
            measurement_order: 2,
            evaluator_order: 3,
            k: 0.01,
            heldout_fraction: 0.2,
            max_vocab: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WatermarkSection {
    pub alpha: f64,
    pub delta: f64,
    pub measure_threshold: usize,
    pub max_tokens: usize,
    pub top_k: usize,
    pub top_p: f64,
    /// Detection verdict threshold as a fraction of `delta`.
    pub threshold: f64,
}

impl Default for WatermarkSection {
    fn default() -> Self {
        Self {
            alpha: WatermarkParams::DEFAULT_ALPHA,
            delta: WatermarkParams::DEFAULT_DELTA,
            measure_threshold: WatermarkParams::DEFAULT_MEASURE_THRESHOLD,
            max_tokens: 200,
            top_k: 50,
            top_p: 0.9,
            threshold: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgwSection {
    pub gamma: f64,
    pub delta_add: f64,
    /// Derived from the global seed when absent.
    pub key: Option<u64>,
    /// Verdict threshold on the green fraction.
    pub threshold: f64,
}

impl Default for KgwSection {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            delta_add: 2.0,
            key: None,
            threshold: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateSection {
    pub scheme: SchemeKind,
    pub count: usize,
    /// Prompts default to the first `prompt_tokens` tokens of held-out documents.
    pub prompt_tokens: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            scheme: SchemeKind::Adaptive,
            count: 1,
            prompt_tokens: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateSection {
    pub scheme: SchemeKind,
    pub samples_per_class: usize,
    pub length: usize,
    pub length_jitter: usize,
    pub prompt_tokens: usize,
    pub attack: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            scheme: SchemeKind::Adaptive,
            samples_per_class: 100,
            length: 200,
            length_jitter: 30,
            prompt_tokens: 8,
            attack: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpoofSection {
    pub target: SchemeKind,
    #[serde(flatten)]
    pub config: SpoofConfig,
    /// Text whose embedding keys every step of the strengthened attack on the
    /// adaptive scheme; the first prompt is used when absent.
    pub fixed_sentence: Option<String>,
    /// Let the pinned embedding replace the opening sentence as well.
    pub pin_opening: bool,
}

impl Default for SpoofSection {
    fn default() -> Self {
        Self {
            target: SchemeKind::Kgw0,
            config: SpoofConfig::default(),
            fixed_sentence: None,
            pin_opening: false,
        }
    }
}

/// Everything a run needs. Every flag mirrors a key here and overrides it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub tokenizer: Tokenizer,
    pub paths: Paths,
    pub corpus: CorpusSection,
    pub lm: LmSection,
    pub mapper: TrainConfig,
    pub watermark: WatermarkSection,
    pub kgw: KgwSection,
    pub generate: GenerateSection,
    pub evaluate: EvaluateSection,
    pub attack: ParaphraseParams,
    pub spoof: SpoofSection,
    /// Opening sentence given inline; only settable through the override flag.
    #[serde(skip)]
    pub opening_inline: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tokenizer: Tokenizer::Whitespace,
            paths: Paths::default(),
            corpus: CorpusSection::default(),
            lm: LmSection::default(),
            mapper: TrainConfig::default(),
            watermark: WatermarkSection::default(),
            kgw: KgwSection::default(),
            generate: GenerateSection::default(),
            evaluate: EvaluateSection::default(),
            attack: ParaphraseParams::default(),
            spoof: SpoofSection::default(),
            opening_inline: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn sampler(&self) -> SamplerParams {
        SamplerParams {
            top_k: self.watermark.top_k,
            top_p: self.watermark.top_p,
            seed: self.seed,
        }
    }

    pub fn watermark_params(&self, opening: Vec<adawm::TokenId>) -> WatermarkParams {
        WatermarkParams {
            alpha: self.watermark.alpha,
            delta: self.watermark.delta,
            measure_threshold: self.watermark.measure_threshold,
            opening,
            sampler: self.sampler(),
            max_tokens: self.watermark.max_tokens,
        }
    }

    pub fn kgw_params(&self, scheme: KgwScheme) -> KgwParams {
        KgwParams {
            gamma: self.kgw.gamma,
            delta_add: self.kgw.delta_add,
            scheme,
            key: self
                .kgw
                .key
                .unwrap_or_else(|| adawm::rng::derive_seed(self.seed, "kgw-key")),
            sampler: self.sampler(),
            max_tokens: self.watermark.max_tokens,
        }
    }
}
