//! Counter-based RNG substreams.
//!
//! A run owns a single 64-bit master seed. Each trajectory draws from a
//! ChaCha stream selected by `(master, iteration, index)`, so parallel
//! sampling is independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream keyed by `(master, iteration, index)`.
pub fn substream(master: u64, iteration: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master ^ splitmix64(iteration)));
    rng.set_stream(index);
    rng
}
