//! Counter-based seed derivation.
//!
//! Every random stream in the simulator is keyed by a path of integers
//! (master seed, setup, snapshot, purpose, ...). A stream never depends on how
//! many other streams were drawn before it, so results are independent of
//! worker count and evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a key path.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(parent), |acc, &part| splitmix64(acc ^ splitmix64(part)))
}

pub fn rng_for(parent: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, path))
}

/// Purpose tags used as the first element of derivation paths.
pub mod stream {
    pub const RX_DROP: u64 = 1;
    pub const TX_DROP: u64 = 2;
    pub const BLOCKER_DROP: u64 = 3;
    pub const SNAPSHOT: u64 = 4;
    pub const CLUSTERS: u64 = 5;
    pub const LSP_GRID: u64 = 6;
    pub const LATTICE_OFFSET: u64 = 7;
}
