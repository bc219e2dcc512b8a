//! Command-line front end: configuration, artifact wiring and report I/O.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, SchemeKind};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "adawm", version, about = "Adaptive text watermarking at desk scale")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override keys of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Entropy threshold in nats.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true)]
    pub measure_threshold: Option<usize>,
    /// File holding the secret opening sentence.
    #[arg(long, global = true)]
    pub opening_sentence_file: Option<PathBuf>,
    /// Opening sentence given inline. It ends up in shell history.
    #[arg(long = "insecure-opening-sentence", global = true)]
    pub opening_sentence: Option<String>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    #[arg(long, global = true)]
    pub top_p: Option<f64>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Output directory for artifacts and reports.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (and reference corpus, if configured).
    MakeCorpus {
        #[arg(long)]
        docs: Option<usize>,
    },
    /// Build the vocabulary and train the generator, measurement and evaluation n-grams.
    TrainLm,
    /// Train the semantic mapping network.
    TrainMapper {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Generate text under a scheme and write generations.txt and generations.jsonl.
    Generate {
        #[arg(long, value_enum)]
        scheme: Option<SchemeKind>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        max_tokens: Option<usize>,
        #[arg(long, conflicts_with = "prompt_file")]
        prompt: Option<String>,
        /// One prompt per line.
        #[arg(long)]
        prompt_file: Option<PathBuf>,
    },
    /// Score each non-empty line of a text file.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        scheme: Option<SchemeKind>,
    },
    /// Run the detection battery and write report.json, samples.csv and roc.csv.
    Evaluate {
        #[arg(long, value_enum)]
        scheme: Option<SchemeKind>,
        #[arg(long)]
        samples: Option<usize>,
        /// Paraphrase watermarked texts before detection.
        #[arg(long)]
        attack: bool,
    },
    /// Paraphrase each non-empty line of a text file.
    Attack {
        #[arg(long)]
        input: PathBuf,
    },
    /// Frequency-analysis spoofing against a scheme.
    Spoof {
        #[arg(long, value_enum)]
        target: Option<SchemeKind>,
        #[arg(long)]
        generations: Option<usize>,
    },
}

impl GlobalArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.alpha {
            c.watermark.alpha = v;
        }
        if let Some(v) = self.delta {
            c.watermark.delta = v;
        }
        if let Some(v) = self.measure_threshold {
            c.watermark.measure_threshold = v;
        }
        if let Some(v) = &self.opening_sentence_file {
            c.paths.opening = Some(v.clone());
        }
        if let Some(v) = &self.opening_sentence {
            c.opening_inline = Some(v.clone());
        }
        if let Some(v) = self.top_k {
            c.watermark.top_k = v;
        }
        if let Some(v) = self.top_p {
            c.watermark.top_p = v;
        }
        if let Some(v) = &self.corpus {
            c.paths.corpus = v.clone();
        }
        if let Some(v) = &self.out {
            c.paths.out = v.clone();
        }
        Ok(c)
    }
}

/// Applies subcommand flags on top of the resolved config and runs it.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut c = cli.global.resolve()?;
    match &cli.command {
        Command::MakeCorpus { docs } => {
            if let Some(v) = docs {
                c.corpus.docs = *v;
            }
            commands::make_corpus(&c)
        }
        Command::TrainLm => commands::train_lm(&c),
        Command::TrainMapper { epochs } => {
            if let Some(v) = epochs {
                c.mapper.epochs = *v;
            }
            commands::train_mapper(&c)
        }
        Command::Generate {
            scheme,
            count,
            max_tokens,
            prompt,
            prompt_file,
        } => {
            if let Some(v) = scheme {
                c.generate.scheme = *v;
            }
            if let Some(v) = count {
                c.generate.count = *v;
            }
            if let Some(v) = max_tokens {
                c.watermark.max_tokens = *v;
            }
            commands::generate(&c, prompt.as_deref(), prompt_file.as_deref())
        }
        Command::Detect { input, scheme } => commands::detect(&c, input, scheme.unwrap_or(c.generate.scheme)),
        Command::Evaluate {
            scheme,
            samples,
            attack,
        } => {
            if let Some(v) = scheme {
                c.evaluate.scheme = *v;
            }
            if let Some(v) = samples {
                c.evaluate.samples_per_class = *v;
            }
            c.evaluate.attack |= attack;
            commands::evaluate(&c).map(|_| ())
        }
        Command::Attack { input } => commands::attack(&c, input),
        Command::Spoof { target, generations } => {
            if let Some(v) = target {
                c.spoof.target = *v;
            }
            if let Some(v) = generations {
                c.spoof.config.generations = *v;
            }
            commands::spoof(&c).map(|_| ())
        }
    }
}
