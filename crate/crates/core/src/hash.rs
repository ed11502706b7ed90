//! Short content hashes used to tie artifacts to the configuration that produced them.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// First 8 bytes of SHA-256 over the canonical JSON encoding of `value`.
///
/// Object keys are emitted in sorted order, so equal configurations hash equally
/// regardless of how they were built.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> [u8; 8] {
    let json = serde_json::to_value(value).expect("config values serialize to JSON");
    let bytes = serde_json::to_vec(&json).expect("JSON values always encode");
    let digest = Sha256::digest(&bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_order_does_not_matter() {
        let a = json!({"k": 192, "nt": 32});
        let b: serde_json::Value = serde_json::from_str(r#"{"nt": 32, "k": 192}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&json!({"k": 191, "nt": 32})));
        assert_eq!(to_hex(&[0, 255, 16]), "00ff10");
    }
}
