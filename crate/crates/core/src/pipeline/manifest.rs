//! Per-stage manifests. Each records the stage fingerprint (resolved config,
//! input file hashes and upstream fingerprints), its hash, and the hashes of
//! the files it wrote. Nothing time- or machine-dependent goes in, so two
//! runs over the same inputs produce identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(sha256_hex(&bytes))
}

/// Hash of a JSON value. `serde_json` keeps object keys sorted (no
/// `preserve_order`), so the encoding is canonical.
pub fn value_hash(v: &Value) -> String {
    sha256_hex(serde_json::to_string(v).expect("json value serializes").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub fingerprint: Value,
    /// Output file name (relative to the stage directory) → sha256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str, fingerprint: Value) -> Self {
        Manifest {
            stage: stage.to_string(),
            config_hash: value_hash(&fingerprint),
            fingerprint,
            outputs: BTreeMap::new(),
        }
    }

    pub fn load(stage_dir: &Path) -> Result<Self, PipelineError> {
        let path = stage_dir.join(MANIFEST_FILE);
        let raw = fs::read_to_string(&path).map_err(|e| PipelineError::Io { path: path.clone(), source: e })?;
        serde_json::from_str(&raw).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Writes `content` under the stage directory and records its hash.
    pub fn write_output(&mut self, stage_dir: &Path, name: &str, content: &[u8]) -> Result<(), PipelineError> {
        let path = stage_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| PipelineError::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        fs::write(&path, content).map_err(|e| PipelineError::Io { path, source: e })?;
        self.outputs.insert(name.to_string(), sha256_hex(content));
        Ok(())
    }

    pub fn save(&self, stage_dir: &Path) -> Result<(), PipelineError> {
        let mut json = serde_json::to_string_pretty(self).expect("manifest serializes");
        json.push('\n');
        let path = stage_dir.join(MANIFEST_FILE);
        fs::write(&path, json).map_err(|e| PipelineError::Io { path, source: e })
    }

    /// Reasons this manifest no longer matches `expected_hash` or the files
    /// on disk. Empty when fresh.
    pub fn staleness(&self, stage_dir: &Path, expected_hash: &str) -> Vec<String> {
        let mut reasons = Vec::new();
        if self.config_hash != expected_hash {
            reasons.push(format!(
                "{} was produced with a different configuration or inputs (config hash {}, now {})",
                self.stage,
                short(&self.config_hash),
                short(expected_hash)
            ));
        }
        for (name, hash) in &self.outputs {
            match file_hash(&stage_dir.join(name)) {
                Ok(h) if &h == hash => {}
                Ok(_) => reasons.push(format!("{}/{name} was modified after it was written", self.stage)),
                Err(_) => reasons.push(format!("{}/{name} is missing", self.stage)),
            }
        }
        reasons
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}
