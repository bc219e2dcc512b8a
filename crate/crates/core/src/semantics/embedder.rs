use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::WatermarkRng;
use crate::vocab::TokenId;

/// Bag-of-tokens sentence embedder.
///
/// Every token owns a row of a seeded Gaussian table, optionally scaled by a
/// per-token weight; a text embeds to the L2-normalized mean of its rows. The
/// empty text maps to the first basis vector.
#[derive(Debug, Clone)]
pub struct SentenceEmbedder {
    seed: u64,
    table: Array2<f64>,
    weights: Option<Vec<f64>>,
    neighbors: Arc<OnceLock<Vec<TokenId>>>,
}

impl SentenceEmbedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(vocab_size: usize, dim: usize, seed: u64) -> Self {
        assert!(vocab_size >= 2 && dim >= 1, "embedder needs |V| >= 2 and L >= 1");
        let mut rng = WatermarkRng::new(seed);
        let table = Array2::from_shape_simple_fn((vocab_size, dim), || StandardNormal.sample(&mut rng));
        Self {
            seed,
            table,
            weights: None,
            neighbors: Arc::new(OnceLock::new()),
        }
    }

    /// Scales row `i` by `weights[i]`.
    pub fn with_token_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.vocab_size() {
            return Err(Error::DimensionMismatch(format!(
                "{} token weights for |V|={}",
                weights.len(),
                self.vocab_size()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("token weights must be positive and finite"));
        }
        for (mut row, &w) in self.table.rows_mut().into_iter().zip(&weights) {
            row *= w;
        }
        self.weights = Some(weights);
        self.neighbors = Arc::new(OnceLock::new());
        Ok(self)
    }

    pub fn token_weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, id: TokenId) -> &[f64] {
        self.table
            .row(id as usize)
            .to_slice()
            .expect("table is standard layout")
    }

    pub fn embed(&self, text: &[TokenId]) -> Vec<f64> {
        let mut p = PrefixEmbedder::new(self);
        for &t in text {
            p.push(t);
        }
        p.embedding()
    }

    /// Closest other token by Euclidean distance between table rows (lowest id on ties).
    pub fn nearest_neighbor(&self, id: TokenId) -> TokenId {
        self.neighbors.get_or_init(|| self.compute_neighbors())[id as usize]
    }

    fn compute_neighbors(&self) -> Vec<TokenId> {
        let n = self.vocab_size();
        (0..n)
            .map(|i| {
                let a = self.row(i as TokenId);
                let mut best = (f64::INFINITY, 0usize);
                for j in (0..n).filter(|&j| j != i) {
                    let d: f64 = a
                        .iter()
                        .zip(self.row(j as TokenId))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    if d < best.0 {
                        best = (d, j);
                    }
                }
                best.1 as TokenId
            })
            .collect()
    }
}

/// Running embedding of a growing prefix.
///
/// Accumulates rows in order, so the embedding after pushing `S_{0:t}` is
/// bit-identical to [`SentenceEmbedder::embed`] on the same slice.
#[derive(Debug, Clone)]
pub struct PrefixEmbedder<'a> {
    embedder: &'a SentenceEmbedder,
    sum: Vec<f64>,
    count: usize,
}

impl<'a> PrefixEmbedder<'a> {
    pub fn new(embedder: &'a SentenceEmbedder) -> Self {
        Self {
            embedder,
            sum: vec![0.0; embedder.dim()],
            count: 0,
        }
    }

    pub fn push(&mut self, id: TokenId) {
        for (s, x) in self.sum.iter_mut().zip(self.embedder.row(id)) {
            *s += x;
        }
        self.count += 1;
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn embedding(&self) -> Vec<f64> {
        let norm = self.sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        if self.count == 0 || norm == 0.0 {
            let mut e = vec![0.0; self.sum.len()];
            e[0] = 1.0;
            return e;
        }
        self.sum.iter().map(|x| x / norm).collect()
    }
}

/// Smooth inverse-frequency weights `a / (a + p(w))`, computed from unigram
/// counts and rounded to `f32` so they survive the mapper file unchanged.
pub fn frequency_weights(counts: &[u64], a: f64) -> Vec<f64> {
    let total = counts.iter().sum::<u64>().max(1) as f64;
    counts
        .iter()
        .map(|&c| (a / (a + c as f64 / total)) as f32 as f64)
        .collect()
}

/// Euclidean distance.
pub fn distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb() -> SentenceEmbedder {
        SentenceEmbedder::new(20, 16, 99)
    }

    fn norm(u: &[f64]) -> f64 {
        u.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn repeated_token_equals_single() {
        let e = emb();
        let a = e.embed(&[3, 3, 3]);
        let b = e.embed(&[3]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_is_reserved_unit_vector() {
        let e = emb();
        let u = e.embed(&[]);
        assert_eq!(u[0], 1.0);
        assert_eq!(norm(&u), 1.0);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(emb().embed(&[1, 2, 3]), emb().embed(&[1, 2, 3]));
        assert_ne!(emb().embed(&[1, 2]), SentenceEmbedder::new(20, 16, 100).embed(&[1, 2]));
    }

    #[test]
    fn prefix_matches_embed_bitwise() {
        let e = emb();
        let text = [4, 9, 1, 1, 7, 0, 19];
        let mut p = PrefixEmbedder::new(&e);
        for t in 0..=text.len() {
            assert_eq!(p.embedding(), e.embed(&text[..t]));
            if t < text.len() {
                p.push(text[t]);
            }
        }
    }

    #[test]
    fn distance_cases() {
        assert!((distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(distance(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert!(distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn nearest_neighbor_is_other_token() {
        let e = emb();
        for id in 0..20 {
            assert_ne!(e.nearest_neighbor(id), id);
        }
    }

    #[test]
    fn weights_downscale_frequent_tokens() {
        let w = frequency_weights(&[90, 9, 1, 0], 0.01);
        assert!(w[0] < w[1] && w[1] < w[2] && w[2] < w[3]);
        assert_eq!(w[3], 1.0);
        let e = emb().with_token_weights((0..20).map(|i| if i == 0 { 0.01 } else { 1.0 }).collect()).unwrap();
        let plain = emb();
        let d_w = distance(&e.embed(&[0, 0, 0, 5]), &e.embed(&[5])).unwrap();
        let d_p = distance(&plain.embed(&[0, 0, 0, 5]), &plain.embed(&[5])).unwrap();
        assert!(d_w < 0.1 && d_p > 0.5);
        assert!(emb().with_token_weights(vec![1.0; 3]).is_err());
        assert!(emb().with_token_weights(vec![0.0; 20]).is_err());
    }

    proptest! {
        #[test]
        fn unit_norm_and_permutation_invariance(mut text in prop::collection::vec(0u32..20, 1..30), seed in any::<u64>()) {
            let e = emb();
            let u = e.embed(&text);
            prop_assert!((norm(&u) - 1.0).abs() < 1e-12);
            let mut rng = WatermarkRng::new(seed);
            rng.shuffle(&mut text);
            let w = e.embed(&text);
            for (x, y) in u.iter().zip(&w) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn unit_distance_bound(a in prop::collection::vec(0u32..20, 1..10), b in prop::collection::vec(0u32..20, 1..10)) {
            let e = emb();
            let d = distance(&e.embed(&a), &e.embed(&b)).unwrap();
            prop_assert!((0.0..=2.0 + 1e-12).contains(&d));
            let d2 = distance(&e.embed(&b), &e.embed(&a)).unwrap();
            prop_assert_eq!(d, d2);
        }
    }
}
