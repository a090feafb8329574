//! Deterministic, label-derived random streams.
//!
//! All randomness in the library flows from a single `u64` seed, fanned out to
//! named streams (`seed.derive("init")`, `seed.derive("clip:3")`, ...) so that
//! any sub-computation can be rerun in isolation and reproduce exactly. The
//! derivation mixes an FNV-1a hash of the label into the parent seed; the
//! stream itself is ChaCha8, which is platform-independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// A seed that can be split into named child seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeed(pub u64);

impl StreamSeed {
    pub fn new(seed: u64) -> Self {
        StreamSeed(seed)
    }

    /// Child seed for the named stream.
    pub fn derive(&self, label: &str) -> StreamSeed {
        // splitmix-style finalizer over seed xor label hash
        let mut z = self.0 ^ fnv1a(label.as_bytes());
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        StreamSeed(z ^ (z >> 31))
    }

    /// Child seed for an indexed stream, e.g. one per clip.
    pub fn derive_indexed(&self, label: &str, index: usize) -> StreamSeed {
        self.derive(&format!("{label}:{index}"))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Fill a slice with uniform samples in `[lo, hi)`.
pub fn fill_uniform(rng: &mut ChaCha8Rng, buf: &mut [f64], lo: f64, hi: f64) {
    for v in buf.iter_mut() {
        *v = rng.gen_range(lo..hi);
    }
}
