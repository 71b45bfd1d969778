//! Reproducible random streams.
//!
//! Every random quantity is drawn from a ChaCha12 generator, a counter-based
//! cipher stream. A stream is identified by a 64-bit base seed plus a path of
//! integer labels (replication index, purpose tag, fold, ...). The base seed
//! keys the cipher and the path is folded into the 64-bit stream id, so two
//! different paths never share a keystream and the draws for one replication
//! do not depend on how many other replications ran before it or on which
//! thread ran them.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// Purpose tags used as the first path element by the library.
pub mod tag {
    pub const COEFFICIENTS: u64 = 1;
    pub const COVARIATES: u64 = 2;
    pub const TREATMENT: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const FOLDS: u64 = 5;
    pub const EVAL_POINTS: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const MLP_INIT: u64 = 8;
    pub const REPLICATION: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a path of labels.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Generator for the stream identified by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(derive_seed(0, path));
    rng
}
