//! Sub-seed derivation.
//!
//! Every random stream is keyed by `(root seed, purpose label)`:
//! `sub_seed = first 8 bytes (little endian) of SHA-256("facegate/seed/v1" || root_le || label)`.
//! Streams therefore never depend on the order in which they are created.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"facegate/seed/v1";

pub fn derive_seed(root: u64, label: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(DOMAIN)
        .chain_update(root.to_le_bytes())
        .chain_update(label.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn rng_for(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label))
}
