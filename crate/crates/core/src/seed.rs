//! Stable seed derivation.
//!
//! Every random draw in the pipeline comes from a ChaCha generator seeded by
//! mixing the master seed with a stream tag and up to two indices. The mixer
//! is SplitMix64, which is fixed forever, unlike `std`'s hashers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep unrelated consumers of the same master seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Params = 1,
    Noise = 2,
    Split = 3,
    Shuffle = 4,
    Init = 5,
    GradCheck = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `(master, stream, a, b)`.
pub fn derive(master: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(17))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    rng(derive(master, stream, a, b))
}
