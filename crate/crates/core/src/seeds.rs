//! Stable child seeds: the first eight bytes of
//! `SHA-256(master_seed as little-endian u64 || path)`, read little-endian.

use sha2::{Digest, Sha256};

pub fn derive_seed(master_seed: u64, path: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(path.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
