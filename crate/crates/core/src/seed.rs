//! Hierarchical seed derivation.
//!
//! Every random stream in the lab descends from one root seed. A child seed is
//! the first eight bytes (little endian) of
//! `SHA-256(root_le || label || 0x00 || idx_0_le || idx_1_le || ...)`, so a
//! stream is addressed by a stage label plus integer coordinates (budget level,
//! run number, user position, ...). Distinct addresses never share a stream and
//! the derivation does not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type LabRng = ChaCha8Rng;

pub fn derive_seed(root: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    h.update([0u8]);
    for idx in indices {
        h.update(idx.to_le_bytes());
    }
    let digest = h.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

pub fn rng_from(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_rng(root: u64, label: &str, indices: &[u64]) -> LabRng {
    rng_from(derive_seed(root, label, indices))
}

/// Hex SHA-256 of a byte string. Used for fingerprints and artifact hashes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_address_sensitive() {
        assert_eq!(derive_seed(7, "sim", &[1, 2]), derive_seed(7, "sim", &[1, 2]));
        assert_ne!(derive_seed(7, "sim", &[1, 2]), derive_seed(7, "sim", &[2, 1]));
        assert_ne!(derive_seed(7, "sim", &[1]), derive_seed(7, "train", &[1]));
        assert_ne!(derive_seed(7, "sim", &[1]), derive_seed(8, "sim", &[1]));
    }

    #[test]
    fn rng_streams_replay() {
        let a: Vec<u32> = derive_rng(1, "x", &[]).random_iter().take(8).collect();
        let b: Vec<u32> = derive_rng(1, "x", &[]).random_iter().take(8).collect();
        assert_eq!(a, b);
    }
}
