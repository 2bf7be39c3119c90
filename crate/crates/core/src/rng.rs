//! Counter-based random substreams.
//!
//! Each Monte Carlo draw gets its own ChaCha stream keyed by
//! `(seed, domain, index)`, so results never depend on how samples are
//! distributed over workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domain for Liouville samples of the unit tangent bundle.
pub const DOMAIN_THETA: u64 = 1;
/// Stream domain for `(x, y)` pairs of the counting estimator.
pub const DOMAIN_PAIRS: u64 = 2;
/// Stream domain for directions of single-trajectory growth experiments.
pub const DOMAIN_DIRECTIONS: u64 = 3;

pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
