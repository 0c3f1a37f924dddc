//! Seeded random streams.
//!
//! Every random decision in the pipeline is drawn from a ChaCha8 generator
//! keyed by `(global seed, stream name)` and positioned on a 64-bit stream
//! index. Workers that process item `i` use stream index `i`, so results do
//! not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const CORPUS: &str = "corpus";
pub const MTR: &str = "mtr";
pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const EMBEDDER: &str = "embedder";
pub const NOISE: &str = "noise";
pub const TEST_MATRIX: &str = "test-matrix";
pub const MIXTURES: &str = "mixtures";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for item `index` of the named stream.
    pub fn rng(&self, name: &str, index: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ fnv1a(name)));
        rng.set_stream(index);
        rng
    }

    /// Derive an independent child seed, e.g. a per-run seed inside a sweep.
    pub fn child(&self, name: &str, index: u64) -> SeedStreams {
        SeedStreams::new(splitmix(splitmix(self.seed ^ fnv1a(name)).wrapping_add(index)))
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
