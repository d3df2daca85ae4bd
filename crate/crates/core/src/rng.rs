//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `&mut impl Rng`. Independent
//! substreams are derived from `(seed, index)` so that Monte Carlo
//! realizations and training runs never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type FriRng = ChaCha8Rng;

/// Root stream for a seed.
pub fn stream(seed: u64) -> FriRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Substream `index` of `seed`; distinct indices give independent streams.
pub fn substream(seed: u64, index: u64) -> FriRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Deterministically mixes a label into a seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
