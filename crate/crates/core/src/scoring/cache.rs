use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ScoreError;

/// Lowercase hex SHA-256 of `backend_id ‖ 0x00 ‖ context ‖ 0x00 ‖ completion`.
pub fn cache_key(backend_id: &str, context: &str, completion: &str) -> String {
    let mut h = Sha256::new();
    h.update(backend_id.as_bytes());
    h.update([0u8]);
    h.update(context.as_bytes());
    h.update([0u8]);
    h.update(completion.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    logprob: f64,
}

/// Content-addressed log-probability cache, optionally backed by an
/// append-only JSONL file.
///
/// Reads take a shared lock; inserts are serialized through the writer.
pub struct ScoreCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, f64>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        ScoreCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads `path` if it exists, compacts it, and opens it for appending.
    ///
    /// A torn final line (from an interrupted write) is dropped.
    pub fn open(path: &Path) -> Result<Self, ScoreError> {
        let io = |e: std::io::Error| ScoreError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        let mut lines = 0usize;
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for line in reader.lines() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                lines += 1;
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(l) => {
                        entries.insert(l.key, l.logprob);
                    }
                    Err(e) => {
                        tracing::warn!("skipping unreadable cache line in {}: {e}", path.display())
                    }
                }
            }
        }
        if lines != entries.len() {
            let tmp = path.with_extension("jsonl.tmp");
            {
                let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
                let mut keys: Vec<&String> = entries.keys().collect();
                keys.sort();
                for k in keys {
                    write_line(&mut w, k, entries[k]).map_err(io)?;
                }
                w.flush().map_err(io)?;
            }
            fs::rename(&tmp, path).map_err(io)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        Ok(ScoreCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(BufWriter::new(file))),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.read().unwrap().get(key).copied()
    }

    /// Returns every value, or `None` if any key is missing.
    pub fn get_all(&self, keys: &[String]) -> Option<Vec<f64>> {
        let entries = self.entries.read().unwrap();
        keys.iter().map(|k| entries.get(k).copied()).collect()
    }

    /// Inserts entries; non-finite values are kept out of the file since
    /// JSON cannot represent them.
    pub fn insert_all(
        &self,
        items: impl IntoIterator<Item = (String, f64)>,
    ) -> Result<(), ScoreError> {
        let mut writer = self.writer.lock().unwrap();
        let mut entries = self.entries.write().unwrap();
        for (key, logprob) in items {
            if !logprob.is_finite() {
                continue;
            }
            if let Some(w) = writer.as_mut() {
                write_line(w, &key, logprob).map_err(|e| ScoreError::Cache(e.to_string()))?;
            }
            entries.insert(key, logprob);
        }
        Ok(())
    }

    pub fn flush(&self) -> Result<(), ScoreError> {
        if let Some(w) = self.writer.lock().unwrap().as_mut() {
            w.flush().map_err(|e| ScoreError::Cache(e.to_string()))?;
        }
        Ok(())
    }
}

impl Drop for ScoreCache {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

fn write_line(w: &mut impl Write, key: &str, logprob: f64) -> std::io::Result<()> {
    let line = serde_json::to_string(&CacheLine {
        key: key.to_string(),
        logprob,
    })?;
    writeln!(w, "{line}")
}
