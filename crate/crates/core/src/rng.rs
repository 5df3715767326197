//! Hierarchical random streams. Every subsystem draws from its own stream,
//! derived from the master seed and a stable label, so changing how one
//! subsystem consumes randomness never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

pub fn derive_stream(master_seed: u64, label: &str) -> SimRng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    SimRng::from_seed(seed)
}
