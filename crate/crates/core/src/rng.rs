//! Seeded, platform-independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-stream for a pipeline stage, derived by a fixed offset.
pub fn stage(seed: u64, offset: u64) -> Rng {
    seeded(seed.wrapping_add(offset))
}
