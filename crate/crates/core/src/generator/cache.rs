use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One stored generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    /// Cache key: SHA-256 over backend identity and prompt.
    pub key: String,
    pub prompt_hash: String,
    pub prompt: String,
    pub output: String,
    pub latency_ms: u64,
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub fn cache_key(backend: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(backend.as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

/// Persistent prompt → output cache: append-only JSON-lines files, one per
/// two-hex-digit key prefix. Concurrent misses on the same key are resolved
/// by a per-key lock so only one record is ever stored.
#[derive(Debug, Default)]
pub struct PromptCache {
    dir: Option<PathBuf>,
    entries: Mutex<HashMap<String, String>>,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    file_lock: Mutex<()>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl PromptCache {
    /// Cache kept only in memory.
    pub fn in_memory() -> Self {
        PromptCache::default()
    }

    /// Opens (creating if needed) a cache directory and loads its records.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = HashMap::new();
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for path in files {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                // A torn final line from an interrupted write is ignored.
                match serde_json::from_str::<GenerationRecord>(&line) {
                    Ok(r) => {
                        entries.entry(r.key).or_insert(r.output);
                    }
                    Err(e) => log::warn!("skipping unreadable cache line in {}: {e}", path.display()),
                }
            }
        }
        Ok(PromptCache {
            dir: Some(dir.to_path_buf()),
            entries: Mutex::new(entries),
            ..PromptCache::default()
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    /// Returns the cached output for `key`, or runs `produce` once and stores its record.
    pub fn get_or_insert_with(
        &self,
        key: &str,
        produce: impl FnOnce() -> Result<GenerationRecord>,
    ) -> Result<String> {
        if let Some(out) = self.get(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(out);
        }
        let lock = self
            .key_locks
            .lock()
            .expect("cache lock")
            .entry(key.to_string())
            .or_default()
            .clone();
        let _guard = lock.lock().expect("key lock");
        if let Some(out) = self.get(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(out);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let record = produce()?;
        self.persist(&record)?;
        self.entries
            .lock()
            .expect("cache lock")
            .insert(record.key.clone(), record.output.clone());
        Ok(record.output)
    }

    fn persist(&self, record: &GenerationRecord) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let path = dir.join(format!("{}.jsonl", &record.key[..2]));
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let _g = self.file_lock.lock().expect("file lock");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn record(key: &str, out: &str) -> GenerationRecord {
        GenerationRecord {
            key: key.into(),
            prompt_hash: prompt_hash("p"),
            prompt: "p".into(),
            output: out.into(),
            latency_ms: 0,
        }
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let key = cache_key("oracle", "hello");
        {
            let c = PromptCache::open(dir.path()).unwrap();
            let out = c.get_or_insert_with(&key, || Ok(record(&key, "world"))).unwrap();
            assert_eq!(out, "world");
            assert_eq!((c.hits(), c.misses()), (0, 1));
        }
        let c = PromptCache::open(dir.path()).unwrap();
        let out = c
            .get_or_insert_with(&key, || panic!("should be served from disk"))
            .unwrap();
        assert_eq!(out, "world");
        assert_eq!(c.hits(), 1);
        assert!(dir.path().join(format!("{}.jsonl", &key[..2])).exists());
    }

    #[test]
    fn concurrent_duplicate_misses_store_one_record() {
        let dir = tempfile::tempdir().unwrap();
        let c = PromptCache::open(dir.path()).unwrap();
        let key = cache_key("oracle", "same");
        let calls = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    c.get_or_insert_with(&key, || {
                        calls.fetch_add(1, Ordering::SeqCst);
                        std::thread::sleep(std::time::Duration::from_millis(20));
                        Ok(record(&key, "x"))
                    })
                    .unwrap()
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let text = std::fs::read_to_string(dir.path().join(format!("{}.jsonl", &key[..2]))).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn failed_production_is_not_cached() {
        let c = PromptCache::in_memory();
        let r = c.get_or_insert_with("k", || Err(Error::Invalid("boom".into())));
        assert!(r.is_err());
        assert!(c.is_empty());
    }

    #[test]
    fn keys_separate_backends() {
        assert_ne!(cache_key("oracle", "p"), cache_key("remote", "p"));
        assert_eq!(prompt_hash("abc").len(), 64);
    }
}
