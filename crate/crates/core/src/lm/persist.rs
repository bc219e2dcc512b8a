//! Binary n-gram file.
//!
//! Layout (all fields little-endian 64-bit):
//!
//! ```text
//! magic "ADAWNGRM" | version | order | k (f64 bits) | role | |V| | vocab hash | record count
//! record*: context length | context ids... | token id | count
//! ```
//!
//! Records are sorted by context length, then context ids, then token id.
//! Context totals are recomputed on load.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::ngram::{ContextCounts, NGramModel, NGramRole};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

const MAGIC: &[u8; 8] = b"ADAWNGRM";
const VERSION: u64 = 1;

impl NGramModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records: Vec<(&[TokenId], TokenId, u64)> = Vec::new();
        for table in &self.tables {
            for (ctx, counts) in table {
                for &(tok, c) in &counts.next {
                    records.push((ctx, tok, c));
                }
            }
        }
        records.sort_unstable_by(|a, b| {
            a.0.len()
                .cmp(&b.0.len())
                .then_with(|| a.0.cmp(b.0))
                .then(a.1.cmp(&b.1))
        });

        let mut out = Vec::with_capacity(64 + records.len() * 8 * (self.order + 2));
        out.extend_from_slice(MAGIC);
        for field in [
            VERSION,
            self.order as u64,
            self.k.to_bits(),
            self.role.code(),
            self.vocab_size as u64,
            self.vocab_hash,
            records.len() as u64,
        ] {
            out.extend_from_slice(&field.to_le_bytes());
        }
        for (ctx, tok, c) in records {
            out.extend_from_slice(&(ctx.len() as u64).to_le_bytes());
            for &id in ctx {
                out.extend_from_slice(&(id as u64).to_le_bytes());
            }
            out.extend_from_slice(&(tok as u64).to_le_bytes());
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut words = bytes[8..].chunks_exact(8).map(|c| {
            u64::from_le_bytes(c.try_into().expect("chunks_exact yields 8 bytes"))
        });
        if bytes[8..].len() % 8 != 0 {
            return Err(bad("truncated"));
        }
        let mut next = || words.next().ok_or_else(|| bad("truncated"));
        let version = next()?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let order = next()? as usize;
        let k = f64::from_bits(next()?);
        let role = NGramRole::from_code(next()?).ok_or_else(|| bad("unknown role"))?;
        let vocab_size = next()? as usize;
        let vocab_hash = next()?;
        let n_records = next()?;
        if order == 0 || !(k > 0.0) || vocab_size < 2 {
            return Err(bad("invalid header"));
        }

        let mut tables: Vec<HashMap<Box<[TokenId]>, ContextCounts>> = vec![HashMap::new(); order];
        for _ in 0..n_records {
            let len = next()? as usize;
            if len >= order {
                return Err(bad("context longer than order - 1"));
            }
            let mut ctx = Vec::with_capacity(len);
            for _ in 0..len {
                ctx.push(read_id(next()?, vocab_size, &bad)?);
            }
            let tok = read_id(next()?, vocab_size, &bad)?;
            let count = next()?;
            let entry = tables[len].entry(ctx.into_boxed_slice()).or_default();
            entry.total += count;
            entry.next.push((tok, count));
        }
        if next().is_ok() {
            return Err(bad("trailing data"));
        }
        for table in &mut tables {
            for counts in table.values_mut() {
                counts.next.sort_unstable();
            }
        }
        Ok(NGramModel {
            order,
            k,
            vocab_size,
            vocab_hash,
            role,
            tables,
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

fn read_id(word: u64, vocab_size: usize, bad: &dyn Fn(&str) -> Error) -> Result<TokenId> {
    if word as usize >= vocab_size {
        return Err(bad("token id out of range"));
    }
    Ok(word as TokenId)
}
