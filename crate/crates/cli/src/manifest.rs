//! Provenance record written next to traces and sweep outputs.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    /// SHA-256 of the problem file bytes, lowercase hex.
    pub problem_sha256: Option<String>,
    pub version: &'static str,
    pub unix_time: u64,
}

impl RunManifest {
    pub fn new(config: impl Serialize, problem_bytes: Option<&[u8]>) -> Result<Self> {
        Ok(Self {
            command: std::env::args().collect(),
            config: serde_json::to_value(config)?,
            problem_sha256: problem_bytes.map(sha256_hex),
            version: env!("CARGO_PKG_VERSION"),
            unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
