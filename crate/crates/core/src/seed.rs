//! Schedule-independent RNG streams.
//!
//! Every random decision is drawn from a ChaCha stream keyed by the run seed
//! plus a label naming the decision, so results do not depend on which worker
//! processes which item.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derives a 64-bit stream seed from a base seed, a purpose label, an
/// identifier and any number of integer coordinates.
pub fn derive_seed(seed: u64, label: &str, id: &str, extra: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update((id.len() as u64).to_le_bytes());
    h.update(id.as_bytes());
    for x in extra {
        h.update(x.to_le_bytes());
    }
    let digest = h.finalize();
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(buf)
}

pub fn stream(seed: u64, label: &str, id: &str, extra: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, label, id, extra))
}
