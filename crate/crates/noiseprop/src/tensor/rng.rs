use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Splittable seed: a key from which child keys and generators are derived.
///
/// `SeedStream::new(seed).child(r).child(l)` depends only on the path, so
/// weights for (realization, layer) never depend on execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedStream {
    key: u64,
}

impl SeedStream {
    pub const INPUT: u64 = 0x1;
    pub const REALIZATION: u64 = 0x2;
    pub const NOISE: u64 = 0x3;
    pub const WEIGHTS: u64 = 0x4;
    pub const PROBE: u64 = 0x5;
    pub const INITIAL_CONV: u64 = 0x6;
    pub const BOOTSTRAP: u64 = 0x7;

    pub fn new(master_seed: u64) -> Self {
        SeedStream {
            key: splitmix64(master_seed),
        }
    }

    pub fn child(self, tag: u64) -> Self {
        SeedStream {
            key: splitmix64(self.key ^ splitmix64(tag.wrapping_add(0xA076_1D64_78BD_642F))),
        }
    }

    pub fn key(self) -> u64 {
        self.key
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
