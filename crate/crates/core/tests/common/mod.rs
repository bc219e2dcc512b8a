#![allow(dead_code)]

use adawm::semantics::{train_mapper, TrainConfig};
use adawm::synth::SyntheticCorpus;
use adawm::{Corpus, NGramModel, NGramRole, SemanticKey, TokenId, Tokenizer, Vocabulary};

/// A small trained pipeline shared by the integration tests.
pub struct Fixture {
    pub vocab: Vocabulary,
    pub train: Corpus,
    pub held: Corpus,
    pub gen: NGramModel,
    pub mm: NGramModel,
    pub key: SemanticKey,
    pub opening: Vec<TokenId>,
    pub prompts: Vec<Vec<TokenId>>,
}

pub fn fixture(seed: u64) -> Fixture {
    let text = SyntheticCorpus::default().generate(1500, seed).join("\n");
    let vocab = Vocabulary::build(text.lines(), Tokenizer::Whitespace, 5000).unwrap();
    let all = Corpus::from_text(&text, &vocab, Tokenizer::Whitespace).unwrap();
    let (train, held) = all.split(0.2, seed).unwrap();
    let lm = |order, role| NGramModel::train(&train, order, 0.01, vocab.len(), vocab.hash(), role).unwrap();
    let gen = lm(3, NGramRole::Generator);
    let mm = lm(2, NGramRole::Measurement);
    let cfg = TrainConfig {
        hidden: 64,
        epochs: 4,
        seed,
        ..TrainConfig::default()
    };
    let (key, _) = train_mapper(&train, vocab.len(), vocab.hash(), &cfg).unwrap();
    let stop = vocab.id(".").unwrap();
    let last = &held.documents[held.len() - 1].ids;
    let end = last.iter().position(|&t| t == stop).map_or(last.len(), |i| i + 1);
    let opening = last[..end].to_vec();
    let prompts = held.documents.iter().filter(|d| d.len() > 8).map(|d| d.ids[..8].to_vec()).collect();
    Fixture {
        vocab,
        train,
        held,
        gen,
        mm,
        key,
        opening,
        prompts,
    }
}
