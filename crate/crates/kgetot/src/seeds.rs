//! Named random sub-streams derived from one root seed.
//!
//! Every component draws from its own stream (`init`, `drop-neighbors/17`,
//! `tct-pairs/3`, …) so runs are reproducible piecewise: changing how one
//! component consumes randomness never perturbs the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic RNG for the sub-stream `name` under `root_seed`.
pub fn sub_rng(root_seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(root_seed.to_le_bytes());
    h.update([0x1f]);
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(seed)
}
