//! Shared vocabulary, token sequences and tokenization.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Surface reserved for out-of-vocabulary input. Always the last index.
pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    #[default]
    Character,
    Whitespace,
}

impl Tokenizer {
    pub fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        match self {
            Tokenizer::Character => text
                .char_indices()
                .map(|(i, c)| &text[i..i + c.len_utf8()])
                .collect(),
            Tokenizer::Whitespace => text.split_whitespace().collect(),
        }
    }

    pub fn join(&self, surfaces: &[&str]) -> String {
        match self {
            Tokenizer::Character => surfaces.concat(),
            Tokenizer::Whitespace => surfaces.join(" "),
        }
    }
}

impl std::str::FromStr for Tokenizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "character" | "char" => Ok(Tokenizer::Character),
            "whitespace" | "word" => Ok(Tokenizer::Whitespace),
            other => Err(Error::invalid(format!("unknown tokenizer {other:?}"))),
        }
    }
}

/// Ordered, immutable token inventory with a dense `0..len` index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    unk: Option<TokenId>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::invalid("vocabulary needs at least two tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.contains('\n') {
                return Err(Error::invalid(format!("token {t:?} contains a newline")));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::invalid(format!("duplicate token surface {t:?}")));
            }
        }
        let unk = index.get(UNK).copied();
        Ok(Self { tokens, index, unk })
    }

    /// Builds a vocabulary from documents, most frequent first (ties by surface),
    /// keeping at most `max_size - 1` surfaces and appending [`UNK`].
    pub fn build<'a, I>(docs: I, tokenizer: Tokenizer, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size < 2 {
            return Err(Error::invalid("max vocabulary size must be at least 2"));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for doc in docs {
            for tok in tokenizer.split(doc) {
                if tok != UNK {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens: Vec<String> = ranked
            .into_iter()
            .take(max_size - 1)
            .map(|(t, _)| t.to_string())
            .collect();
        tokens.push(UNK.to_string());
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unk(&self) -> Option<TokenId> {
        self.unk
    }

    /// Tokenizes `text`, mapping unknown surfaces to [`UNK`] (or failing if there is none).
    pub fn encode(&self, text: &str, tokenizer: Tokenizer) -> Result<Vec<TokenId>> {
        tokenizer
            .split(text)
            .into_iter()
            .map(|s| {
                self.id(s)
                    .or(self.unk)
                    .ok_or_else(|| Error::invalid(format!("token {s:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId], tokenizer: Tokenizer) -> Result<String> {
        let surfaces = ids
            .iter()
            .map(|&id| {
                self.surface(id).ok_or(Error::TokenOutOfRange {
                    id: id as usize,
                    size: self.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(tokenizer.join(&surfaces))
    }

    pub fn check(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.len()) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id: id as usize,
                size: self.len(),
            }),
            None => Ok(()),
        }
    }

    /// Line-delimited serialization: one surface per line, index = line number.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        Self::new(body.split('\n').map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_lines()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_lines(&text)
    }

    /// First 8 bytes (big-endian) of SHA-256 over the line-delimited serialization.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_lines().as_bytes());
        u64::from_be_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SeqRole {
    Prompt,
    Generated,
    #[default]
    Candidate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    #[serde(default)]
    pub role: SeqRole,
}

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>, role: SeqRole) -> Self {
        Self { ids, role }
    }

    pub fn candidate(ids: Vec<TokenId>) -> Self {
        Self::new(ids, SeqRole::Candidate)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `S_{0:t}`: the first `t` tokens.
    pub fn prefix(&self, t: usize) -> &[TokenId] {
        &self.ids[..t.min(self.ids.len())]
    }
}

impl AsRef<[TokenId]> for TokenSeq {
    fn as_ref(&self) -> &[TokenId] {
        &self.ids
    }
}
