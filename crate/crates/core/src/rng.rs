//! Named, splittable seed streams.
//!
//! A [`SeedStream`] is a 64-bit key. Children are derived by hashing the parent key
//! with a tag, so `(seed, generation, individual)` addresses a unique generator no
//! matter which thread consumes it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream(splitmix64(seed))
    }

    pub fn key(self) -> u64 {
        self.0
    }

    pub fn child(self, tag: u64) -> Self {
        SeedStream(splitmix64(self.0 ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    /// Child keyed by a string label, for readable call sites.
    pub fn named(self, label: &str) -> Self {
        let tag = label
            .bytes()
            .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
        self.child(tag)
    }

    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
