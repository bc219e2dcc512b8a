use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::WatermarkRng;
use crate::vocab::{SeqRole, TokenSeq, Tokenizer, Vocabulary};

/// Tokenized documents, one per input line.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub documents: Vec<TokenSeq>,
    pub source: Option<PathBuf>,
    pub tokenizer: Tokenizer,
}

impl Corpus {
    /// Encodes each non-blank line as a document; unknown surfaces map to UNK.
    pub fn from_text(text: &str, vocab: &Vocabulary, tokenizer: Tokenizer) -> Result<Self> {
        let documents = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                vocab
                    .encode(l, tokenizer)
                    .map(|ids| TokenSeq::new(ids, SeqRole::Candidate))
            })
            .collect::<Result<Vec<_>>>()?;
        let corpus = Self {
            documents,
            source: None,
            tokenizer,
        };
        corpus.ensure_non_empty()?;
        Ok(corpus)
    }

    pub fn load(path: &Path, vocab: &Vocabulary, tokenizer: Tokenizer) -> Result<Self> {
        let text = read_lines_file(path)?;
        let mut corpus = Self::from_text(&text, vocab, tokenizer)?;
        corpus.source = Some(path.to_path_buf());
        Ok(corpus)
    }

    pub fn from_documents(documents: Vec<TokenSeq>, tokenizer: Tokenizer) -> Result<Self> {
        let corpus = Self {
            documents,
            source: None,
            tokenizer,
        };
        corpus.ensure_non_empty()?;
        Ok(corpus)
    }

    fn ensure_non_empty(&self) -> Result<()> {
        if self.documents.iter().all(|d| d.is_empty()) {
            Err(Error::EmptyCorpus)
        } else {
            Ok(())
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.documents.iter().map(TokenSeq::len).sum()
    }

    /// Deterministic shuffle-split into `(train, heldout)`; `heldout_fraction` of
    /// the documents (at least one) go to the second part.
    pub fn split(&self, heldout_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
        if !(0.0..1.0).contains(&heldout_fraction) || self.len() < 2 {
            return Err(Error::invalid("split needs >= 2 documents and a fraction in [0, 1)"));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        WatermarkRng::new(seed).shuffle(&mut idx);
        let n_held = ((self.len() as f64 * heldout_fraction).round() as usize).clamp(1, self.len() - 1);
        let (held, train) = idx.split_at(n_held);
        let pick = |ids: &[usize]| {
            let mut ids = ids.to_vec();
            ids.sort_unstable();
            Corpus {
                documents: ids.iter().map(|&i| self.documents[i].clone()).collect(),
                source: self.source.clone(),
                tokenizer: self.tokenizer,
            }
        };
        Ok((pick(train), pick(held)))
    }
}

pub(crate) fn read_lines_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
