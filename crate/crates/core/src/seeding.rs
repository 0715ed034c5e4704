//! Named, order-independent seed derivation.

use sha2::{Digest, Sha256};

/// First eight bytes (little endian) of `SHA-256(tag ‖ 0x00 ‖ parts as u64 LE)`.
///
/// Every seeded stream in the crate is derived this way so that work can be split
/// across threads without changing any draw.
pub fn derive_seed(tag: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update([0u8]);
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Stable numeric key for a string identifier, for use inside [`derive_seed`] parts.
pub fn label_key(label: &str) -> u64 {
    derive_seed(label, &[])
}
