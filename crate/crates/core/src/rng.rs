//! Seeded, platform-independent randomness.
//!
//! Every random draw in the crate goes through [`WatermarkRng`], a
//! xoshiro256++ generator whose 256-bit state is filled from a 64-bit seed
//! with SplitMix64 (the reference seeding procedure of the xoshiro authors).
//! Uniform reals are `(next_u64() >> 11) * 2^-53`, so draws can be reproduced
//! bit-for-bit in any language that implements the two generators.
//!
//! Sub-seeds are derived from a global seed and a textual label with
//! [`derive_seed`]: the label is hashed with 64-bit FNV-1a, xored into the
//! global seed and passed through one SplitMix64 finalization round.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Derives an independent seed for a labelled sub-task ("lm-train", "gen:17", ...).
pub fn derive_seed(global: u64, label: &str) -> u64 {
    mix64(global ^ fnv1a64(label.as_bytes()))
}

#[derive(Debug, Clone)]
pub struct WatermarkRng {
    inner: Xoshiro256PlusPlus,
}

impl WatermarkRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn derived(global: u64, label: &str) -> Self {
        Self::new(derive_seed(global, label))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by multiply-shift on the high 64 bits.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates shuffle driven by [`WatermarkRng::below`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for WatermarkRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
