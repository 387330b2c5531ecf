//! Counter-based seed derivation.
//!
//! Every random draw in a sweep comes from a ChaCha stream whose seed is a
//! pure function of the master seed and a path of counters (grid point,
//! realization, ...). Parallel schedules therefore never change results.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Random stream used throughout the crate.
pub type Stream = ChaCha20Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of counters into a child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Opens the stream at `path` below `master`.
pub fn stream(master: u64, path: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(master, path))
}

/// Counter for a real-valued grid coordinate, so inserting grid points never
/// reshuffles the draws of existing ones.
pub fn value_key(value: f64) -> u64 {
    // -0.0 and 0.0 name the same grid point.
    if value == 0.0 {
        0
    } else {
        value.to_bits()
    }
}
