//! On-disk response cache: one JSON file per request key.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompt::InstructionId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub example_id: String,
    pub instruction_id: InstructionId,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
}

impl CacheKey {
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("key serializes")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub prompt: String,
    pub response: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.digest()))
    }

    /// A hit requires the stored prompt to match, so edits to the prompt
    /// (for example a new causal-word list) are never served stale.
    pub fn get(&self, key: &CacheKey, prompt: &str) -> Option<String> {
        let raw = fs::read_to_string(self.path(key)).ok()?;
        let entry: CacheEntry = serde_json::from_str(&raw).ok()?;
        (entry.key == key.canonical() && entry.prompt == prompt).then_some(entry.response)
    }

    /// Writes atomically: temp file in the cache directory, then rename.
    pub fn put(&self, key: &CacheKey, prompt: &str, response: &str) -> std::io::Result<()> {
        let entry = CacheEntry {
            key: key.canonical(),
            prompt: prompt.to_string(),
            response: response.to_string(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let target = self.path(key);
        let tmp = self.dir.join(format!(
            ".{}.{}.{:?}.tmp",
            key.digest(),
            std::process::id(),
            std::thread::current().id()
        ));
        fs::write(&tmp, serde_json::to_vec_pretty(&entry)?)?;
        fs::rename(&tmp, &target)
    }
}
