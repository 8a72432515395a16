//! Seed derivation. Every stream in the crate is a `ChaCha8Rng` seeded from
//! a splitmix64 child of the run's master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `index`-th child seed of `master`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut s = master ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut s)
}

/// Named sub-streams of one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Train = 2,
    Eval = 3,
    Sample = 4,
    GradCheck = 5,
}

pub fn stream(master: u64, which: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(master, 0xC0DE_0000 + which as u64))
}
