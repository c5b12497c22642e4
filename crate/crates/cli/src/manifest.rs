use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Provenance record written alongside every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration as canonical JSON.
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
    pub version: String,
    pub timestamp: String,
}

/// Object keys come out sorted (serde_json's default map), so equal
/// configurations hash equally regardless of construction order.
pub fn config_hash(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).expect("JSON values serialise");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// `SOURCE_DATE_EPOCH` when set (reproducible builds convention), else now.
fn timestamp() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0));
    pinned
        .unwrap_or_else(Utc::now)
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &serde_json::Value,
        seed: Option<u64>,
        inputs: Vec<String>,
        outputs: Vec<String>,
    ) -> Self {
        Self {
            command: command.to_string(),
            config_sha256: config_hash(config),
            seed,
            inputs,
            outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: timestamp(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b": 1, "a": [1, 2]}"#).unwrap();
        let b = json!({"a": [1, 2], "b": 1});
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&json!({"a": [2, 1], "b": 1})));
        assert_eq!(config_hash(&b).len(), 64);
    }
}
