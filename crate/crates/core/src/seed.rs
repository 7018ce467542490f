//! Deterministic seed derivation.
//!
//! Every stochastic unit of work (a simulation segment, a bootstrap
//! resample, a Monte-Carlo trial) draws from its own generator whose seed is
//! derived from the run's master seed and the unit's index. Adding a stream
//! never perturbs the ones already defined, and results do not depend on the
//! order in which units are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for component `index` of `master`.
///
/// `derive_seed(m, i) = mix64(m + (i + 1) * GOLDEN_GAMMA)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Generator for a (component, index) pair under `master`.
pub fn rng_for(master: u64, component: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(derive_seed(master, component), index))
}
