//! Seeded random streams.
//!
//! One root seed feeds every consumer. Each consumer draws from its own PCG
//! stream (`Lcg128Xsl64` with the stream selector set to the consumer id), so
//! adding draws in one consumer never shifts another.

use rand::SeedableRng;
use rand_pcg::Pcg64;

pub type Rng = Pcg64;

/// Consumers of randomness. The discriminant is the PCG stream selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Stream {
    Init = 1,
    Dropout = 2,
    Sampler = 3,
    Augment = 4,
    Shuffle = 5,
    Synth = 6,
    Check = 7,
}

const SEED_MIX: u128 = 0x9e37_79b9_7f4a_7c15_f39c_c060_5ced_c834;

pub fn stream(seed: u64, which: Stream) -> Rng {
    Pcg64::new((seed as u128).wrapping_mul(SEED_MIX) ^ SEED_MIX, which as u128)
}

/// Independent sub-stream, e.g. one per epoch or per sample.
pub fn substream(seed: u64, which: Stream, index: u64) -> Rng {
    let mixed = seed ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93).rotate_left(17);
    Pcg64::new(
        (mixed as u128).wrapping_mul(SEED_MIX) ^ ((index as u128) << 64),
        which as u128,
    )
}

pub fn from_u64(seed: u64) -> Rng {
    Pcg64::seed_from_u64(seed)
}
