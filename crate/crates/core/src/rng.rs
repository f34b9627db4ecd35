//! Labeled random substreams.
//!
//! Every random draw in the pipeline comes from a ChaCha stream keyed by
//! `(seed, label, index)`, so changing one consumer (say, dropout) never
//! perturbs another (say, scene placement).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub const SCENE: &str = "scene";
pub const SPLIT: &str = "split";
pub const PAIRS: &str = "pairs";
pub const AUGMENT: &str = "augment";
pub const BALANCE: &str = "balance";
pub const SHUFFLE: &str = "shuffle";
pub const DROPOUT: &str = "dropout";
pub const INIT: &str = "init";

pub fn substream(seed: u64, label: &str, index: u64) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Derive a child seed, for APIs that take a plain `u64`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    use rand::RngCore;
    substream(seed, label, index).next_u64()
}
