//! The project-wide seedable generator.
//!
//! Every stochastic operation takes an explicit `u64` seed and derives its
//! stream from [`seeded`], so identical seeds reproduce identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used by all randomized operations.
pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
