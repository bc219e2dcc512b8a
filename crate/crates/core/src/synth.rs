//! Seeded synthetic corpus with topical structure.
//!
//! Real corpora are not bundled, so the test suites and the `make-corpus`
//! command draw documents from a small probabilistic grammar over invented
//! words. Each document picks a topic; nouns, verbs and adjectives are mostly
//! drawn from that topic's lexicon with Zipf-like weights, which gives the
//! n-gram models a mix of low-entropy (function word) and high-entropy
//! (content word) positions, and gives sentence embeddings topical spread.

use serde::{Deserialize, Serialize};

use crate::rng::WatermarkRng;

const DETERMINERS: &[&str] = &["the", "a", "this", "every", "some", "that"];
const PRONOUNS: &[&str] = &["it", "they", "she", "he", "we", "you"];
const PREPOSITIONS: &[&str] = &["of", "in", "on", "with", "near", "under", "about", "from"];
const CONJUNCTIONS: &[&str] = &["and", "but", "so", "while", "because"];
const ADVERBS: &[&str] = &["slowly", "often", "never", "again", "quickly", "rarely", "always", "still"];
const SHARED_ADJECTIVES: &[&str] = &["old", "new", "small", "large", "good", "strange", "quiet", "bright"];

/// Set phrases, one slot per word. The first variant of a slot is the usual
/// one; the rest share the remaining mass.
const PHRASES: &[&[&[&str]]] = &[
    &[&["on"], &["the"], &["other"], &["hand", "side"]],
    &[&["at"], &["the"], &["end", "start"], &["of"], &["the"], &["day", "week", "year"]],
    &[&["for"], &["the"], &["first", "last"], &["time"]],
    &[&["more"], &["or"], &["less"]],
    &[&["in"], &["front", "spite"], &["of"], &["it", "them"]],
    &[&["once"], &["upon", "in"], &["a"], &["time", "while"]],
    &[&["sooner"], &["or"], &["later"]],
    &[&["by"], &["and"], &["large"]],
    &[&["as"], &["a"], &["matter", "rule"], &["of"], &["fact", "course"]],
];
const USUAL_VARIANT: f64 = 0.85;

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kl", "st", "tr", "sh", "ch"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ea"];
const CODAS: &[&str] = &["", "n", "r", "l", "s", "k", "m", "th"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpus {
    pub topics: usize,
    pub nouns_per_topic: usize,
    pub verbs_per_topic: usize,
    pub adjectives_per_topic: usize,
    /// Probability that a content word comes from a random other topic.
    pub off_topic: f64,
    pub sentences_per_doc: (usize, usize),
    /// Zipf exponent for function words (determiners, pronouns, ...).
    pub function_skew: f64,
    /// Zipf exponent for content words.
    pub content_skew: f64,
    /// Per-sentence probability of an opening and of a closing set phrase.
    pub phrase_rate: (f64, f64),
    pub lexicon_seed: u64,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        Self {
            topics: 12,
            nouns_per_topic: 30,
            verbs_per_topic: 12,
            adjectives_per_topic: 12,
            off_topic: 0.15,
            sentences_per_doc: (2, 5),
            function_skew: 1.6,
            content_skew: 0.8,
            phrase_rate: (0.3, 0.2),
            lexicon_seed: 0x5eed_1e81_c0de,
        }
    }
}

struct Lexicon {
    nouns: Vec<Vec<String>>,
    verbs: Vec<Vec<String>>,
    adjectives: Vec<Vec<String>>,
}

impl SyntheticCorpus {
    fn lexicon(&self) -> Lexicon {
        let mut rng = WatermarkRng::new(self.lexicon_seed);
        let mut seen = std::collections::HashSet::new();
        for w in DETERMINERS
            .iter()
            .chain(PHRASES.iter().flat_map(|p| p.iter().flat_map(|slot| slot.iter())))
            .chain(PRONOUNS)
            .chain(PREPOSITIONS)
            .chain(CONJUNCTIONS)
            .chain(ADVERBS)
            .chain(SHARED_ADJECTIVES)
        {
            seen.insert(w.to_string());
        }
        let mut word = |suffix: &str| loop {
            let syllables = 2 + rng.below(2);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS[rng.below(ONSETS.len())]);
                w.push_str(VOWELS[rng.below(VOWELS.len())]);
            }
            w.push_str(CODAS[rng.below(CODAS.len())]);
            w.push_str(suffix);
            if seen.insert(w.clone()) {
                return w;
            }
        };
        let mut nouns = Vec::new();
        let mut verbs = Vec::new();
        let mut adjectives = Vec::new();
        for _ in 0..self.topics {
            nouns.push((0..self.nouns_per_topic).map(|_| word("")).collect());
            verbs.push((0..self.verbs_per_topic).map(|_| word("es")).collect());
            adjectives.push((0..self.adjectives_per_topic).map(|_| word("y")).collect());
        }
        Lexicon {
            nouns,
            verbs,
            adjectives,
        }
    }

    /// `n_docs` whitespace-tokenizable documents (punctuation is space separated).
    pub fn generate(&self, n_docs: usize, seed: u64) -> Vec<String> {
        let lex = self.lexicon();
        let mut rng = WatermarkRng::new(seed);
        (0..n_docs)
            .map(|_| {
                let topic = rng.below(self.topics);
                let (lo, hi) = self.sentences_per_doc;
                let n = lo + rng.below(hi - lo + 1);
                let mut words: Vec<&str> = Vec::new();
                for _ in 0..n {
                    self.sentence(&lex, topic, &mut rng, &mut words);
                }
                words.join(" ")
            })
            .collect()
    }

    fn sentence<'a>(&self, lex: &'a Lexicon, topic: usize, rng: &mut WatermarkRng, out: &mut Vec<&'a str>) {
        if rng.bernoulli(self.phrase_rate.0) {
            phrase(rng, out);
            out.push(",");
        }
        self.clause(lex, topic, rng, out);
        if rng.bernoulli(self.phrase_rate.1) {
            phrase(rng, out);
        }
        out.push(".");
    }

    fn clause<'a>(&self, lex: &'a Lexicon, topic: usize, rng: &mut WatermarkRng, out: &mut Vec<&'a str>) {
        match rng.below(5) {
            0 | 1 => {
                self.noun_phrase(lex, topic, rng, out);
                out.push(self.pick(&lex.verbs, topic, rng));
                self.noun_phrase(lex, topic, rng, out);
                if rng.bernoulli(0.5) {
                    out.push(zipf(PREPOSITIONS, self.function_skew, rng));
                    self.noun_phrase(lex, topic, rng, out);
                }
            }
            2 => {
                out.push(zipf(PRONOUNS, self.function_skew, rng));
                out.push(self.pick(&lex.verbs, topic, rng));
                self.noun_phrase(lex, topic, rng, out);
                out.push(zipf(CONJUNCTIONS, self.function_skew, rng));
                out.push(zipf(PRONOUNS, self.function_skew, rng));
                out.push(self.pick(&lex.verbs, topic, rng));
                out.push(zipf(ADVERBS, self.function_skew, rng));
            }
            3 => {
                self.noun_phrase(lex, topic, rng, out);
                out.push(zipf(PREPOSITIONS, self.function_skew, rng));
                self.noun_phrase(lex, topic, rng, out);
                out.push(self.pick(&lex.verbs, topic, rng));
                out.push(zipf(ADVERBS, self.function_skew, rng));
            }
            _ => {
                out.push(zipf(ADVERBS, self.function_skew, rng));
                out.push(",");
                self.noun_phrase(lex, topic, rng, out);
                out.push(self.pick(&lex.verbs, topic, rng));
                self.noun_phrase(lex, topic, rng, out);
            }
        }
    }

    fn noun_phrase<'a>(&self, lex: &'a Lexicon, topic: usize, rng: &mut WatermarkRng, out: &mut Vec<&'a str>) {
        out.push(zipf(DETERMINERS, self.function_skew, rng));
        let r = rng.next_f64();
        if r < 0.3 {
            out.push(self.pick(&lex.adjectives, topic, rng));
        } else if r < 0.45 {
            out.push(zipf(SHARED_ADJECTIVES, self.function_skew, rng));
        }
        out.push(self.pick(&lex.nouns, topic, rng));
    }

    fn pick<'a>(&self, lists: &'a [Vec<String>], topic: usize, rng: &mut WatermarkRng) -> &'a str {
        let t = if rng.bernoulli(self.off_topic) {
            rng.below(self.topics)
        } else {
            topic
        };
        zipf(&lists[t], self.content_skew, rng)
    }
}

fn phrase<'a>(rng: &mut WatermarkRng, out: &mut Vec<&'a str>) {
    for slot in PHRASES[rng.below(PHRASES.len())].iter() {
        let word = if slot.len() == 1 || rng.bernoulli(USUAL_VARIANT) {
            slot[0]
        } else {
            slot[1 + rng.below(slot.len() - 1)]
        };
        out.push(word);
    }
}

/// Draws from `items` with weight proportional to `1 / (rank + 1)^skew`.
fn zipf<'a, S: AsRef<str>>(items: &'a [S], skew: f64, rng: &mut WatermarkRng) -> &'a str {
    let weights: Vec<f64> = (0..items.len()).map(|r| 1.0 / ((r + 1) as f64).powf(skew)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.next_f64() * total;
    for (item, w) in items.iter().zip(&weights) {
        if u < *w {
            return item.as_ref();
        }
        u -= w;
    }
    items[items.len() - 1].as_ref()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_non_empty() {
        let g = SyntheticCorpus::default();
        let a = g.generate(20, 3);
        assert_eq!(a, g.generate(20, 3));
        assert_ne!(a, g.generate(20, 4));
        assert!(a.iter().all(|d| d.ends_with('.') && d.split(' ').count() >= 8));
    }

    #[test]
    fn lexicon_is_unique() {
        let g = SyntheticCorpus::default();
        let lex = g.lexicon();
        let mut all: Vec<&String> = lex.nouns.iter().chain(&lex.verbs).chain(&lex.adjectives).flatten().collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }
}
