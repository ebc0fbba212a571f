//! Seed derivation. Every unit, replicate and experiment cell gets its own
//! ChaCha stream keyed by a derived seed, so results do not depend on the
//! order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type CegRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a path of identifiers into a child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Independent stream `id` under `seed`.
pub fn stream(seed: u64, id: u64) -> CegRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn seeded(seed: u64) -> CegRng {
    ChaCha8Rng::seed_from_u64(seed)
}
