//! Named, seeded random streams.
//!
//! Every random decision derives from one user seed through a named
//! sub-stream (`"split"`, `"augment"`, `"init"`, `"shuffle"`, …), so adding a
//! consumer never perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent stream for `(seed, name)`.
pub fn substream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Independent stream for `(seed, name, index)`; used for per-draw seeding
/// so draws can be generated in any order or in parallel.
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> Rng {
    let mut key = name.as_bytes().to_vec();
    key.extend_from_slice(&index.to_le_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(&key));
    rng
}
