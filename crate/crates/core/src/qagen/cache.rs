//! Append-only store of generation outcomes keyed by (template digest, doc id).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::repair::RepairStage;
use crate::corpus::QaPair;
use crate::jsonl::{self, JsonlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationStatus {
    Ok,
    ParseFailed,
    ServiceFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub doc_id: String,
    pub prompt: String,
    pub raw_response: String,
    pub pairs: Vec<QaPair>,
    pub status: GenerationStatus,
    pub attempt_count: u32,
    /// Repair stages that changed the reply, or the stage a parse failed at.
    #[serde(default)]
    pub repairs: Vec<RepairStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerationRecord {
    pub fn is_ok(&self) -> bool {
        self.status == GenerationStatus::Ok
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    template: String,
    record: GenerationRecord,
}

/// Only `ok` records are served back; failures are logged but retried on the
/// next run. The last line for a key wins.
#[derive(Debug)]
pub struct GenerationCache {
    path: Option<PathBuf>,
    hits: HashMap<(String, String), GenerationRecord>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl GenerationCache {
    /// A cache that lives only for this process.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            hits: HashMap::new(),
            writer: Mutex::new(None),
        }
    }

    pub fn open(path: &Path) -> Result<Self, JsonlError> {
        let mut hits = HashMap::new();
        if path.exists() {
            for (_, line) in jsonl::read_records::<CacheLine>(path)? {
                let key = (line.template, line.record.doc_id.clone());
                if line.record.is_ok() {
                    hits.insert(key, line.record);
                } else {
                    hits.remove(&key);
                }
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            hits,
            writer: Mutex::new(None),
        })
    }

    pub fn get(&self, template: &str, doc_id: &str) -> Option<&GenerationRecord> {
        self.hits.get(&(template.to_string(), doc_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    /// Appends one outcome. Safe to call from several threads.
    pub fn append(&self, template: &str, record: &GenerationRecord) -> Result<(), JsonlError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let io_err = |source| JsonlError::Io {
            path: path.clone(),
            source,
        };
        let mut guard = self.writer.lock().expect("cache writer poisoned");
        if guard.is_none() {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io_err)?;
            *guard = Some(BufWriter::new(file));
        }
        let w = guard.as_mut().expect("writer initialised above");
        let line = CacheLine {
            template: template.to_string(),
            record: record.clone(),
        };
        serde_json::to_writer(&mut *w, &line).map_err(|e| io_err(std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(io_err)?;
        w.flush().map_err(io_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;

    fn record(doc: &str, status: GenerationStatus) -> GenerationRecord {
        GenerationRecord {
            doc_id: doc.into(),
            prompt: "p".into(),
            raw_response: "r".into(),
            pairs: if status == GenerationStatus::Ok {
                vec![QaPair::new("q", "a", doc, Origin::Llm)]
            } else {
                vec![]
            },
            status,
            attempt_count: 1,
            repairs: vec![],
            error: None,
        }
    }

    #[test]
    fn reopened_cache_serves_ok_records_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = GenerationCache::open(&path).unwrap();
        cache.append("t", &record("a", GenerationStatus::Ok)).unwrap();
        cache.append("t", &record("b", GenerationStatus::ParseFailed)).unwrap();
        cache.append("u", &record("c", GenerationStatus::Ok)).unwrap();
        drop(cache);

        let cache = GenerationCache::open(&path).unwrap();
        assert!(cache.get("t", "a").is_some());
        assert!(cache.get("t", "b").is_none());
        assert!(cache.get("t", "c").is_none());
        assert!(cache.get("u", "c").is_some());
        assert_eq!(cache.len(), 2);
    }
}
