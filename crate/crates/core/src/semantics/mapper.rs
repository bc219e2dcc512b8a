use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RescaleBounds;
use crate::rng::WatermarkRng;
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    pub(crate) fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(crate::Error::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

/// Weights of the residual feedforward mapper.
///
/// `input (L -> H)`, two residual blocks `h + act(W h + b)` of width `H`,
/// `output (H -> |V|)`. Matrices are stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapperParams {
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

/// Intermediate activations for a batch (one row per item).
pub(crate) struct ForwardCache {
    pub h0: Array2<f64>,
    pub a1: Array2<f64>,
    pub h1: Array2<f64>,
    pub a2: Array2<f64>,
    pub h2: Array2<f64>,
    pub v: Array2<f64>,
}

impl MapperParams {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w_in: Array2::zeros((hidden, input)),
            b_in: Array1::zeros(hidden),
            w1: Array2::zeros((hidden, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, hidden)),
            b2: Array1::zeros(hidden),
            w_out: Array2::zeros((output, hidden)),
            b_out: Array1::zeros(output),
        }
    }

    /// Gaussian init: `N(0, 1/fan_in)` for the input and output layers and a
    /// damped `N(0, 0.25/H)` inside the residual blocks; zero biases.
    pub fn random(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = WatermarkRng::new(seed);
        let mut draw = |rows: usize, cols: usize, std: f64| {
            let n = Normal::new(0.0, std).expect("positive std");
            Array2::from_shape_simple_fn((rows, cols), || n.sample(&mut rng))
        };
        let w_in = draw(hidden, input, (1.0 / input as f64).sqrt());
        let w1 = draw(hidden, hidden, (0.25 / hidden as f64).sqrt());
        let w2 = draw(hidden, hidden, (0.25 / hidden as f64).sqrt());
        let w_out = draw(output, hidden, (1.0 / hidden as f64).sqrt());
        Self {
            w_in,
            b_in: Array1::zeros(hidden),
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(hidden),
            w_out,
            b_out: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.nrows()
    }

    /// Parameter blocks in persistence order.
    pub fn slices(&self) -> [&[f64]; 8] {
        fn s(a: Option<&[f64]>) -> &[f64] {
            a.expect("parameters are standard layout")
        }
        [
            s(self.w_in.as_slice()),
            s(self.b_in.as_slice()),
            s(self.w1.as_slice()),
            s(self.b1.as_slice()),
            s(self.w2.as_slice()),
            s(self.b2.as_slice()),
            s(self.w_out.as_slice()),
            s(self.b_out.as_slice()),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 8] {
        fn s(a: Option<&mut [f64]>) -> &mut [f64] {
            a.expect("parameters are standard layout")
        }
        [
            s(self.w_in.as_slice_mut()),
            s(self.b_in.as_slice_mut()),
            s(self.w1.as_slice_mut()),
            s(self.b1.as_slice_mut()),
            s(self.w2.as_slice_mut()),
            s(self.b2.as_slice_mut()),
            s(self.w_out.as_slice_mut()),
            s(self.b_out.as_slice_mut()),
        ]
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat-index accessors spanning all blocks in persistence order.
    pub fn get(&self, mut i: usize) -> f64 {
        for s in self.slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set(&mut self, mut i: usize, value: f64) {
        for s in self.slices_mut() {
            if i < s.len() {
                s[i] = value;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index out of range");
    }

    /// `self += scale * other`, block by block.
    pub fn add_scaled(&mut self, other: &MapperParams, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    /// Rounds every weight to the nearest `f32`, the precision of the mapper file.
    pub fn round_to_f32(&mut self) {
        for block in self.slices_mut() {
            for w in block.iter_mut() {
                *w = *w as f32 as f64;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn forward_batch(&self, x: ArrayView2<f64>, act: Activation) -> ForwardCache {
        let h0 = x.dot(&self.w_in.t()) + &self.b_in;
        let a1 = h0.dot(&self.w1.t()) + &self.b1;
        let h1 = &h0 + &a1.mapv(|z| act.apply(z));
        let a2 = h1.dot(&self.w2.t()) + &self.b2;
        let h2 = &h1 + &a2.mapv(|z| act.apply(z));
        let v = h2.dot(&self.w_out.t()) + &self.b_out;
        ForwardCache { h0, a1, h1, a2, h2, v }
    }

    /// Gradients w.r.t. all parameters given `dL/dv` for each batch row.
    pub(crate) fn backward(
        &self,
        x: ArrayView2<f64>,
        cache: &ForwardCache,
        dv: &Array2<f64>,
        act: Activation,
    ) -> MapperParams {
        let w_out = dv.t().dot(&cache.h2);
        let b_out = dv.sum_axis(Axis(0));
        let dh2 = dv.dot(&self.w_out);

        let da2 = &dh2 * &cache.a2.mapv(|z| act.derivative(z));
        let w2 = da2.t().dot(&cache.h1);
        let b2 = da2.sum_axis(Axis(0));
        let dh1 = &dh2 + &da2.dot(&self.w2);

        let da1 = &dh1 * &cache.a1.mapv(|z| act.derivative(z));
        let w1 = da1.t().dot(&cache.h0);
        let b1 = da1.sum_axis(Axis(0));
        let dh0 = &dh1 + &da1.dot(&self.w1);

        let w_in = dh0.t().dot(&x);
        let b_in = dh0.sum_axis(Axis(0));
        MapperParams {
            w_in,
            b_in,
            w1,
            b1,
            w2,
            b2,
            w_out,
            b_out,
        }
    }
}

/// Semantic mapping network together with the metadata saved alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMapper {
    pub params: MapperParams,
    pub activation: Activation,
    pub bounds: RescaleBounds,
    pub embedder_seed: u64,
    /// Embedder token weights, when the embedder uses them.
    pub token_weights: Option<Vec<f64>>,
    pub vocab_hash: u64,
}

impl SemanticMapper {
    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.params.hidden_dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.params.output_dim()
    }

    pub fn embedder_seed(&self) -> u64 {
        self.embedder_seed
    }

    /// Logits scaling vector `v = SM(u)`.
    pub fn forward(&self, u: &[f64]) -> Vec<f64> {
        let x = ArrayView2::from_shape((1, u.len()), u).expect("row vector");
        self.params
            .forward_batch(x, self.activation)
            .v
            .into_raw_vec_and_offset()
            .0
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.params.forward_batch(x, self.activation).v
    }
}

/// Binarized scaling vector: token `i` is green iff `v_i > 0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "GreenListRepr", try_from = "GreenListRepr")]
pub struct GreenList {
    words: Vec<u64>,
    len: usize,
}

impl GreenList {
    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for (i, b) in bits.into_iter().enumerate() {
            if i % 64 == 0 {
                words.push(0);
            }
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
            len = i + 1;
        }
        Self { words, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, id: TokenId) -> bool {
        let i = id as usize;
        i < self.len && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// The 0/1 indicator vector.
    pub fn indicator(&self) -> Vec<f64> {
        (0..self.len).map(|i| if self.contains(i as TokenId) { 1.0 } else { 0.0 }).collect()
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.len as TokenId).filter(|&i| self.contains(i))
    }

    /// Lowercase hex of the little-endian bit words, for text reports.
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(self.words.len() * 16);
        for w in &self.words {
            s.push_str(&format!("{w:016x}"));
        }
        s
    }

    pub fn from_hex(hex: &str, len: usize) -> Option<Self> {
        if hex.len() != len.div_ceil(64) * 16 {
            return None;
        }
        let words = (0..hex.len() / 16)
            .map(|i| u64::from_str_radix(&hex[i * 16..i * 16 + 16], 16).ok())
            .collect::<Option<Vec<_>>>()?;
        Some(Self { words, len })
    }
}

#[derive(Serialize, Deserialize)]
struct GreenListRepr {
    len: usize,
    hex: String,
}

impl From<GreenList> for GreenListRepr {
    fn from(g: GreenList) -> Self {
        Self {
            len: g.len,
            hex: g.to_hex(),
        }
    }
}

impl TryFrom<GreenListRepr> for GreenList {
    type Error = String;

    fn try_from(r: GreenListRepr) -> Result<Self, String> {
        GreenList::from_hex(&r.hex, r.len).ok_or_else(|| "malformed green list".to_string())
    }
}

/// `1{v_i > 0}` elementwise.
pub fn binarize(v: &[f64]) -> GreenList {
    GreenList::from_bools(v.iter().map(|&x| x > 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mapper(params: MapperParams) -> SemanticMapper {
        SemanticMapper {
            params,
            activation: Activation::Relu,
            bounds: RescaleBounds::new(0.0, 1.0, -2.0, 4.0).unwrap(),
            embedder_seed: 0,
            token_weights: None,
            vocab_hash: 0,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = mapper(MapperParams::zeros(4, 8, 6));
        assert_eq!(m.forward(&[0.5, 0.5, 0.5, 0.5]), vec![0.0; 6]);
    }

    #[test]
    fn forward_deterministic_and_finite() {
        let m = mapper(MapperParams::random(4, 8, 6, 1));
        let u = [0.1, -0.7, 0.7, 0.1];
        let a = m.forward(&u);
        assert_eq!(a, m.forward(&u));
        assert!(a.iter().all(|x| x.is_finite()));
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn binarize_rule() {
        let g = binarize(&[0.3, -0.2, 0.0]);
        assert_eq!(g.indicator(), vec![1.0, 0.0, 0.0]);
        assert_eq!(binarize(&[-1.0, -0.5]).count(), 0);
    }

    #[test]
    fn flat_index_covers_all_blocks() {
        let mut p = MapperParams::random(3, 5, 4, 2);
        let n = p.len();
        assert_eq!(n, 5 * 3 + 5 + 25 + 5 + 25 + 5 + 4 * 5 + 4);
        p.set(n - 1, 9.0);
        assert_eq!(p.b_out[3], 9.0);
        assert_eq!(p.get(0), p.w_in[[0, 0]]);
    }

    #[test]
    fn hex_round_trip() {
        let g = GreenList::from_bools((0..130).map(|i| i % 3 == 0));
        let back = GreenList::from_hex(&g.to_hex(), 130).unwrap();
        assert_eq!(g, back);
        assert!(GreenList::from_hex("zz", 3).is_none());
    }

    proptest! {
        #[test]
        fn binarize_positive_scale_invariant(v in prop::collection::vec(-5.0f64..5.0, 1..100), c in 1e-3f64..1e3) {
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            prop_assert_eq!(binarize(&v), binarize(&scaled));
        }

        #[test]
        fn negation_flips_nonzero(v in prop::collection::vec(-5.0f64..5.0, 1..100)) {
            let a = binarize(&v);
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let b = binarize(&neg);
            for (i, x) in v.iter().enumerate() {
                if *x != 0.0 {
                    prop_assert_ne!(a.contains(i as u32), b.contains(i as u32));
                }
            }
        }
    }
}
