//! On-disk layout of a pipeline store and content digests.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cluster::{AuditEvent, Cluster};
use crate::corpus::{self, CorpusError, Document, GeneralInstruction, QaPair};
use crate::jsonl::{self, JsonlError};
use crate::qagen::GenerationRecord;

pub const DOCUMENTS: &str = "documents.jsonl";
pub const INSTRUCTIONS: &str = "instructions.jsonl";
pub const QA_PAIRS: &str = "qa.jsonl";
pub const GENERATION_RECORDS: &str = "genqa_records.jsonl";
pub const GENERATION_CACHE: &str = "genqa_cache.jsonl";
pub const CLUSTERS: &str = "clusters.jsonl";
pub const CLUSTER_AUDIT: &str = "cluster_audit.jsonl";
pub const PACK_REPORT: &str = "pack_report.json";
pub const RUN_MANIFEST: &str = "manifest.json";
pub const RUN_TIMING: &str = "timing.json";
pub const STAGES_DIR: &str = "stages";

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn create(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join(STAGES_DIR))?;
        Ok(Self { root })
    }

    /// Opens an existing store.
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        if !root.join(DOCUMENTS).is_file() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("{} is not a store (no {DOCUMENTS}); run ingest first", root.display()),
            ));
        }
        std::fs::create_dir_all(root.join(STAGES_DIR))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn stage_record_path(&self, stage: &str) -> PathBuf {
        self.root.join(STAGES_DIR).join(format!("{stage}.json"))
    }

    pub fn documents(&self) -> Result<Vec<Document>, CorpusError> {
        corpus::read_documents(&self.path(DOCUMENTS))
    }

    pub fn instructions(&self) -> Result<Vec<GeneralInstruction>, CorpusError> {
        let path = self.path(INSTRUCTIONS);
        if !path.exists() {
            return Ok(Vec::new());
        }
        corpus::read_instructions(&path)
    }

    /// QA pairs, or none if no QA stage has run.
    pub fn pairs(&self, docs: &[Document]) -> Result<Vec<QaPair>, CorpusError> {
        let path = self.path(QA_PAIRS);
        if !path.exists() {
            return Ok(Vec::new());
        }
        corpus::load_pairs(&path, docs)
    }

    pub fn generation_records(&self) -> Result<Vec<GenerationRecord>, JsonlError> {
        read_all(&self.path(GENERATION_RECORDS))
    }

    pub fn clusters(&self) -> Result<Vec<Cluster>, JsonlError> {
        read_all(&self.path(CLUSTERS))
    }

    pub fn audit(&self) -> Result<Vec<AuditEvent>, JsonlError> {
        read_all(&self.path(CLUSTER_AUDIT))
    }
}

pub fn read_all<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    Ok(jsonl::read_records(path)?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_json<T: Serialize>(value: &T) -> String {
    digest_bytes(&serde_json::to_vec(value).expect("value serializes"))
}

/// Hex SHA-256 of a file's contents.
pub fn file_digest(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let mut file = File::open(path)?;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}
