//! Splittable, reproducible random streams.
//!
//! A [`RngStream`] is a lightweight handle `(seed, path)`. Child streams are
//! derived by label (`"tasks"`, `"features"`, ...) or by integer index (trial
//! number, task number), so a consumer can be handed its own stream without
//! touching anybody else's draws. Generators are ChaCha8 keyed by a 64-bit
//! mix of the full path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    key: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix(seed.wrapping_add(GOLDEN)),
        }
    }

    /// Child stream identified by a label.
    pub fn substream(&self, label: &str) -> Self {
        Self {
            key: mix(self.key ^ mix(fnv1a(label).wrapping_add(GOLDEN))),
        }
    }

    /// Child stream identified by an index.
    pub fn index(&self, i: u64) -> Self {
        Self {
            key: mix(self.key.rotate_left(17) ^ mix(i.wrapping_mul(GOLDEN).wrapping_add(1))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }

    pub fn key(&self) -> u64 {
        self.key
    }
}
