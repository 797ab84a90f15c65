//! Seed derivation.
//!
//! Every random component draws from a ChaCha stream keyed by the master
//! seed and a stream id hashed from a label plus an index. Streams never
//! share state, so the order in which components are constructed does not
//! change what any of them sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Root of the seed hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `(label, index)`.
    pub fn stream(&self, label: &str, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(label.as_bytes()) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng
    }

    /// A child tree, for handing a whole sub-hierarchy to a component.
    pub fn child(&self, label: &str, index: u64) -> SeedTree {
        use rand::RngCore;
        SeedTree::new(self.stream(label, index).next_u64())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
