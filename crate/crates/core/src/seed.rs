//! Stable sub-seed derivation.
//!
//! Every random stream in the pipeline is keyed by a root seed plus a purpose
//! string (and optional counters), hashed with SHA-256. Streams are therefore
//! independent of evaluation order, so per-frame work can run in any order
//! and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit sub-seed from `(seed, purpose, counters)`.
pub fn derive(seed: u64, purpose: &str, counters: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    for c in counters {
        hasher.update(c.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// A ChaCha8 generator seeded from [`derive`].
pub fn rng(seed: u64, purpose: &str, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, purpose, counters))
}
