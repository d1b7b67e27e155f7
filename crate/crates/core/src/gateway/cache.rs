//! Content-addressed response cache: in memory, optionally mirrored to a
//! directory as `<key[..2]>/<key>.json`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Entry {
    material: String,
    text: String,
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    mem: RwLock<HashMap<String, Entry>>,
}

pub fn content_key(material: &str) -> String {
    hex::encode(Sha256::digest(material.as_bytes()))
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        ResponseCache {
            dir: Some(dir.into()),
            mem: RwLock::default(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(&key[..2]).join(format!("{key}.json")))
    }

    /// Cached text for `material`. An entry stored under the same key for
    /// different material is a collision and is ignored.
    pub fn get(&self, material: &str) -> Option<String> {
        let key = content_key(material);
        if let Some(e) = self.mem.read().expect("cache lock").get(&key) {
            return (e.material == material).then(|| e.text.clone());
        }
        let path = self.path_for(&key)?;
        let bytes = std::fs::read(path).ok()?;
        let entry: Entry = serde_json::from_slice(&bytes).ok()?;
        if entry.material != material {
            tracing::warn!(key, "cache key collision ignored");
            return None;
        }
        let text = entry.text.clone();
        self.mem.write().expect("cache lock").insert(key, entry);
        Some(text)
    }

    pub fn put(&self, material: &str, text: &str) {
        let key = content_key(material);
        let entry = Entry {
            material: material.to_string(),
            text: text.to_string(),
        };
        if let Some(path) = self.path_for(&key) {
            if let Err(e) = write_atomic(&path, &serde_json::to_vec(&entry).expect("serializable")) {
                tracing::warn!(path = %path.display(), error = %e, "cache write failed");
            }
        }
        self.mem.write().expect("cache lock").insert(key, entry);
    }

    pub fn len(&self) -> usize {
        self.mem.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let a = ResponseCache::on_disk(dir.path());
        a.put("k1", "v1");
        let b = ResponseCache::on_disk(dir.path());
        assert_eq!(b.get("k1").as_deref(), Some("v1"));
        assert_eq!(b.get("k2"), None);
    }

    #[test]
    fn collisions_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let c = ResponseCache::on_disk(dir.path());
        c.put("m", "v");
        let key = content_key("m");
        let path = dir.path().join(&key[..2]).join(format!("{key}.json"));
        std::fs::write(&path, r#"{"material":"other","text":"x"}"#).unwrap();
        assert_eq!(ResponseCache::on_disk(dir.path()).get("m"), None);
    }
}
