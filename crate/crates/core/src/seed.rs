//! Named random substreams derived from a single run seed.
//!
//! Every stage (split, augment, init, batch order, baseline, ...) draws from
//! its own stream so stages can be re-run independently and still agree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from `seed` and a stream name.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

/// A ChaCha generator for the named substream.
pub fn rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(seed, name))
}
