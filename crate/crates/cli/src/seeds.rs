//! Seed splitting.
//!
//! Every random stream is derived from the root seed as the first eight
//! bytes (little endian) of `SHA-256(root_le ‖ tag ‖ 0x00 ‖ index_le)`.

use sha2::{Digest, Sha256};

pub const SIMULATE: &str = "simulate";
pub const FIT: &str = "fit";

pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
