//! SHA-256 digests over raw file bytes, written as `sha256:<hex>`.

use sha2::{Digest, Sha256};

pub const PREFIX: &str = "sha256:";

pub fn sha256_tag(bytes: &[u8]) -> String {
    format!("{PREFIX}{}", hex::encode(Sha256::digest(bytes)))
}

/// Compares a manifest entry with the digest of `bytes`; the hex part is case-insensitive.
pub fn matches(tag: &str, bytes: &[u8]) -> bool {
    match tag.strip_prefix(PREFIX) {
        Some(hexpart) => hexpart.eq_ignore_ascii_case(&sha256_tag(bytes)[PREFIX.len()..]),
        None => false,
    }
}
