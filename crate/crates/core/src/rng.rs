//! Seed derivation for reproducible, schedule-independent random streams.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a
//! [`Seed`]. Seeds form a tree: a job's seed is derived from its parent seed
//! and its index, so results depend only on the master seed and the job's
//! position, never on which thread ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seed {
    /// Seed of the `index`-th child job.
    pub fn child(self, index: u64) -> Seed {
        Seed(splitmix64(splitmix64(self.0) ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    /// Seed of a named sub-stream (e.g. "smc", "kmeans").
    pub fn named(self, name: &str) -> Seed {
        // FNV-1a over the name, then mixed with the parent.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.child(h)
    }

    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}
