//! Binary mapper file.
//!
//! ```text
//! magic "ADAWMAPR" | version | L | H | |V| | vocab hash | embedder seed | activation
//! | lower | upper | target lower | target upper | token weight count (0 or |V|)
//!                                                    (u64 / f64 bits, little-endian)
//! | token weights as f32 LE
//! | network weights as f32 LE: W_in (H x L), b_in, W1, b1, W2, b2, W_out (|V| x H), b_out
//! ```

use std::fs;
use std::path::Path;

use super::mapper::{Activation, MapperParams, SemanticMapper};
use super::RescaleBounds;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ADAWMAPR";
const VERSION: u64 = 1;
const HEADER_WORDS: usize = 12;

impl SemanticMapper {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(8 + HEADER_WORDS * 8 + p.len() * 4);
        out.extend_from_slice(MAGIC);
        for field in [
            VERSION,
            p.input_dim() as u64,
            p.hidden_dim() as u64,
            p.output_dim() as u64,
            self.vocab_hash,
            self.embedder_seed,
            self.activation.code(),
            self.bounds.lower.to_bits(),
            self.bounds.upper.to_bits(),
            self.bounds.target_lower.to_bits(),
            self.bounds.target_upper.to_bits(),
            self.token_weights.as_ref().map_or(0, |w| w.len() as u64),
        ] {
            out.extend_from_slice(&field.to_le_bytes());
        }
        for &w in self.token_weights.iter().flatten() {
            out.extend_from_slice(&(w as f32).to_le_bytes());
        }
        for block in p.slices() {
            for &w in block {
                out.extend_from_slice(&(w as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let header_end = 8 + HEADER_WORDS * 8;
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes.len() < header_end {
            return Err(bad("truncated header"));
        }
        let word = |i: usize| {
            let at = 8 + i * 8;
            u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
        };
        if word(0) != VERSION {
            return Err(bad(&format!("unsupported version {}", word(0))));
        }
        let (input, hidden, output) = (word(1) as usize, word(2) as usize, word(3) as usize);
        if input == 0 || hidden == 0 || output < 2 {
            return Err(bad("invalid dimensions"));
        }
        let activation = Activation::from_code(word(6)).ok_or_else(|| bad("unknown activation"))?;
        let bounds = RescaleBounds {
            lower: f64::from_bits(word(7)),
            upper: f64::from_bits(word(8)),
            target_lower: f64::from_bits(word(9)),
            target_upper: f64::from_bits(word(10)),
        };
        bounds.validate().map_err(|_| bad("invalid rescale bounds"))?;

        let n_token_weights = match word(11) as usize {
            0 => 0,
            n if n == output => n,
            _ => return Err(bad("token weight count must be 0 or |V|")),
        };
        let mut params = MapperParams::zeros(input, hidden, output);
        let expected = (params.len() + n_token_weights)
            .checked_mul(4)
            .and_then(|n| n.checked_add(header_end))
            .ok_or_else(|| bad("dimensions overflow"))?;
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let mut weights = bytes[header_end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64);
        let token_weights: Option<Vec<f64>> =
            (n_token_weights > 0).then(|| weights.by_ref().take(n_token_weights).collect());
        if let Some(w) = &token_weights {
            if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(bad("token weights must be positive and finite"));
            }
        }
        for block in params.slices_mut() {
            for (w, v) in block.iter_mut().zip(&mut weights) {
                *w = v;
            }
        }
        if !params.is_finite() {
            return Err(bad("non-finite weight"));
        }
        Ok(SemanticMapper {
            params,
            activation,
            bounds,
            embedder_seed: word(5),
            token_weights,
            vocab_hash: word(4),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mapper() -> SemanticMapper {
        let mut params = MapperParams::random(4, 6, 9, 11);
        params.round_to_f32();
        SemanticMapper {
            params,
            activation: Activation::Tanh,
            bounds: RescaleBounds::new(0.0, 1.7, -2.0, 4.0).unwrap(),
            embedder_seed: 99,
            token_weights: None,
            vocab_hash: 0xdead_beef,
        }
    }

    #[test]
    fn round_trip_with_token_weights() {
        let mut m = mapper();
        m.token_weights = Some((0..9).map(|i| 0.125 * (i + 1) as f64).collect());
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 8 + 96 + (m.params.len() + 9) * 4);
        assert_eq!(SemanticMapper::from_bytes(&bytes, Path::new("mem")).unwrap(), m);
    }

    #[test]
    fn round_trip_is_exact_for_f32_weights() {
        let m = mapper();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 8 + 96 + m.params.len() * 4);
        let back = SemanticMapper::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = mapper().to_bytes();
        assert!(SemanticMapper::from_bytes(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(SemanticMapper::from_bytes(&extra, Path::new("m")).is_err());
        let mut magic = bytes.clone();
        magic[3] = 0;
        assert!(SemanticMapper::from_bytes(&magic, Path::new("m")).is_err());
        let mut act = bytes;
        act[8 + 6 * 8] = 77;
        assert!(SemanticMapper::from_bytes(&act, Path::new("m")).is_err());
    }
}
