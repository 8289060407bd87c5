//! JSON report envelope: payload, provenance, and an isolated metadata block.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(what: &'static str, path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::missing_or_io(what, path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// SHA-256 of each input, keyed by its role.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(config: &RunConfig, inputs: BTreeMap<String, String>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            inputs,
        }
    }
}

/// Wall-clock data kept apart so the rest of a report is reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub timestamp_unix: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub command: String,
    pub provenance: Provenance,
    pub report: T,
    pub metadata: Metadata,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &str, provenance: Provenance, report: T) -> Self {
        let timestamp_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            command: command.to_string(),
            provenance,
            report,
            metadata: Metadata { timestamp_unix },
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}
