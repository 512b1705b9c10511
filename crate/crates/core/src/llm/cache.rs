use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::util;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub kind: String,
    pub model_id: String,
    #[serde(default)]
    pub model_fingerprint: Option<String>,
    pub request: Value,
    pub response: Value,
}

/// Content-addressed response store, one file per key under
/// `<dir>/<key[..2]>/<key>.json`.
///
/// Entries are never rewritten: the first writer wins, and a concurrent
/// second writer of the same key produces identical bytes anyway.
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, CacheEntry>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            dir: None,
            memory: Mutex::new(HashMap::new()),
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        ResponseCache {
            dir: Some(dir.into()),
            memory: Mutex::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> Option<&PathBuf> {
        self.dir.as_ref()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(&key[..2]).join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        if let Some(e) = self.memory.lock().unwrap_or_else(|e| e.into_inner()).get(key) {
            return Some(e.clone());
        }
        let bytes = fs::read(self.path(key)?).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        if entry.key != key {
            return None;
        }
        self.memory
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key.to_string(), entry.clone());
        Some(entry)
    }

    pub fn put(
        &self,
        key: &str,
        kind: &str,
        model_id: &str,
        fingerprint: Option<&str>,
        request: Value,
        response: Value,
    ) -> std::io::Result<()> {
        let entry = CacheEntry {
            key: key.to_string(),
            kind: kind.to_string(),
            model_id: model_id.to_string(),
            model_fingerprint: fingerprint.map(str::to_string),
            request,
            response,
        };
        if let Some(path) = self.path(key) {
            if !path.exists() {
                let bytes = serde_json::to_vec(&entry).map_err(std::io::Error::other)?;
                util::atomic_write(&path, &bytes)?;
            }
        }
        self.memory
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key.to_string(), entry);
        Ok(())
    }

    /// Distinct model fingerprints recorded for `model_id`, sorted.
    pub fn fingerprints(&self, model_id: &str) -> Vec<String> {
        let mut out: Vec<String> = self
            .memory
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .filter(|e| e.model_id == model_id)
            .filter_map(|e| e.model_fingerprint.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}
