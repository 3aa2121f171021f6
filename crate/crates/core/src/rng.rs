//! Keyed random streams.
//!
//! Every random decision in a run draws from a ChaCha8 stream whose seed is
//! derived from the master seed and a path of integer labels (round,
//! iteration, group, device, purpose). Streams never depend on the order in
//! which workers execute, so parallel runs reproduce sequential ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose labels that keep streams for different decisions disjoint.
pub mod purpose {
    pub const MODEL_INIT: u64 = 1;
    pub const CLASS_MEANS: u64 = 2;
    pub const DEVICE_DIST: u64 = 3;
    pub const DEVICE_BATCH: u64 = 4;
    pub const TEST_SET: u64 = 5;
    pub const PRESAMPLE: u64 = 6;
    pub const SAMPLER: u64 = 7;
    pub const FUZZ: u64 = 8;
    pub const BENCH: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A position in the tree of random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(splitmix64(seed))
    }

    /// Derives a child key. Distinct labels give independent streams.
    pub fn child(self, label: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(label.wrapping_add(0x6A09_E667_F3BC_C909))))
    }

    pub fn path(self, labels: &[u64]) -> Self {
        labels.iter().fold(self, |k, &l| k.child(l))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn value(self) -> u64 {
        self.0
    }
}
