use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub backend_tag: String,
    pub prompt_hash: String,
    pub response: String,
    pub timestamp: u64,
}

pub(crate) fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

struct Inner {
    map: HashMap<(String, String), String>,
    file: File,
}

/// Append-only JSONL response cache keyed by (backend tag, prompt hash).
/// A torn trailing line from an interrupted run is ignored on reload.
pub struct ResponseCache {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut map = HashMap::new();
        if path.exists() {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(e) => {
                        map.insert((e.backend_tag, e.prompt_hash), e.response);
                    }
                    Err(e) if !line.trim().is_empty() => {
                        log::warn!("{}: skipping unreadable cache line: {e}", path.display());
                    }
                    Err(_) => {}
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        Ok(ResponseCache {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner { map, file }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache poisoned").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, backend_tag: &str, prompt_hash: &str) -> Option<String> {
        self.inner
            .lock()
            .expect("cache poisoned")
            .map
            .get(&(backend_tag.to_string(), prompt_hash.to_string()))
            .cloned()
    }

    pub fn put(&self, backend_tag: &str, prompt_hash: &str, response: &str) -> Result<()> {
        let entry = CacheEntry {
            backend_tag: backend_tag.to_string(),
            prompt_hash: prompt_hash.to_string(),
            response: response.to_string(),
            timestamp: unix_now(),
        };
        let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
        line.push('\n');
        let mut inner = self.inner.lock().expect("cache poisoned");
        let key = (entry.backend_tag, entry.prompt_hash);
        if inner.map.contains_key(&key) {
            return Ok(());
        }
        inner
            .file
            .write_all(line.as_bytes())
            .and_then(|_| inner.file.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        inner.map.insert(key, entry.response);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survives_reopen_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/cache.jsonl");
        {
            let c = ResponseCache::open(&path).unwrap();
            c.put("m", "h1", "A").unwrap();
            c.put("m", "h1", "B").unwrap();
            c.put("n", "h1", "C").unwrap();
        }
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"backend_tag\":\"m\",\"prom")
            .unwrap();
        let c = ResponseCache::open(&path).unwrap();
        c.put("m", "h3", "B").unwrap();
        drop(c);
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.get("m", "h3").as_deref(), Some("B"));
        assert_eq!(c.get("m", "h1").as_deref(), Some("A"));
        assert_eq!(c.get("n", "h1").as_deref(), Some("C"));
        assert_eq!(c.get("m", "h2"), None);
    }
}
