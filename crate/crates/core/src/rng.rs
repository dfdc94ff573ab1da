//! Named, seed-derived random streams.
//!
//! Every random decision in the engine is drawn from a substream identified by
//! `(root seed, stream name, index)`. Two components never share a stream, so
//! changing how one component consumes randomness cannot perturb another, and
//! per-user draws do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream names used across the engine.
pub mod streams {
    pub const SPLIT: &str = "split";
    pub const SHUFFLE: &str = "shuffle";
    pub const TIES: &str = "ties";
    pub const SAMPLING: &str = "sampling";
    pub const GENERATOR: &str = "generator";
    pub const MODEL_INIT: &str = "model-init";
    pub const TRIAL: &str = "trial";
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, name, index)`.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(name.as_bytes())));
    rng.set_stream(index);
    rng
}
