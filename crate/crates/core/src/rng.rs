//! Keyed random substreams.
//!
//! Every consumer asks for a stream by `(master seed, label, index)`; the key
//! is hashed with SHA-256 into a ChaCha seed. Adding a new label never shifts
//! the numbers seen by existing labels, and index `n` of a counter-keyed
//! stream does not depend on how many other indices were drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

fn digest(master: u64, label: &str, index: i64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"hennion-lab/v1");
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let out = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&out);
    seed
}

/// Stream for `(master, label, index)`.
pub fn stream(master: u64, label: &str, index: i64) -> Stream {
    ChaCha8Rng::from_seed(digest(master, label, index))
}

/// A 64-bit child seed for `(master, label, index)`.
pub fn child_seed(master: u64, label: &str, index: i64) -> u64 {
    let d = digest(master, label, index);
    u64::from_le_bytes([d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7]])
}
