//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is the tuple
//! `(seed, tag, index)`. Streams with different tags or indices are
//! independent, so trials and operators can be drawn in any order or in
//! parallel without changing the result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain separator for a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamTag {
    Gaussian = 1,
    Rademacher = 2,
    RosSigns = 3,
    RosRows = 4,
    NystromPlain = 5,
    NystromAls = 6,
    AlsPerturbation = 7,
    DataInputs = 8,
    DataNoise = 9,
    Trial = 10,
    SketchSeed = 11,
}

const KEY_CONSTANT: u64 = 0x6b63_676d_2d72_6e67; // "kcgm-rng"

pub fn stream(seed: u64, tag: StreamTag, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(tag as u64).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..32].copy_from_slice(&KEY_CONSTANT.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Derives a child seed from `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: StreamTag, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, tag, index).next_u64()
}
