//! Stable derivation of independent random streams.
//!
//! Every stochastic stage draws from its own ChaCha8 stream whose seed is a
//! hash of `(master seed, run index, stage name)`. The hash is SplitMix64
//! finalization applied over the master seed, the run index and the FNV-1a
//! digest of the stage name, so adding a stage never perturbs the streams of
//! existing ones. The derivation is part of the output format: changing it
//! changes every result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used throughout the crate.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the seed for `stage` of run `run` under `master`.
pub fn derive_seed(master: u64, run: u64, stage: &str) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ run.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(b ^ fnv1a(stage.as_bytes()))
}

/// Random stream for `stage` of run `run` under `master`.
pub fn stream(master: u64, run: u64, stage: &str) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, run, stage))
}
