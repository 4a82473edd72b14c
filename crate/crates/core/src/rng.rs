//! Counter-keyed random streams.
//!
//! Every draw in the simulator comes from a ChaCha8 generator seeded with
//! the run seed and positioned on a stream derived from a tuple of counters,
//! so the numbers an example or worker sees never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a tuple of counters into one stream id.
pub fn stream_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &p| mix64(acc ^ mix64(p)))
}

/// Generator for `seed` on the stream named by `parts`.
pub fn keyed_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_key(parts));
    rng
}

/// Stream tags keeping unrelated uses apart.
pub mod tag {
    pub const TASK_INIT: u64 = 1;
    pub const TEACHER: u64 = 2;
    pub const EXAMPLE: u64 = 3;
    pub const HELD_OUT: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const FIT_RESTART: u64 = 6;
}
