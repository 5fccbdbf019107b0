//! Per-run manifest: resolved config, seed, input hash and output checksums.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// SHA-256 over the resolved config and every input file's bytes.
    pub input_sha256: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub status: String,
    pub exit_code: i32,
    pub outputs: Vec<OutputEntry>,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn input_hash(config: &serde_json::Value, inputs: &[std::path::PathBuf]) -> anyhow::Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    for p in inputs {
        let bytes = std::fs::read(p).with_context(|| format!("cannot read input {}", p.display()))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Records checksums of the listed files, which must live in `dir`.
pub fn index_outputs(dir: &Path, files: &[String]) -> anyhow::Result<Vec<OutputEntry>> {
    files
        .iter()
        .map(|f| {
            let bytes = std::fs::read(dir.join(f)).with_context(|| format!("cannot read output {f}"))?;
            Ok(OutputEntry {
                file: f.clone(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))
    }
}
