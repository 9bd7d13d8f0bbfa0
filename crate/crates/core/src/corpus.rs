//! Raw corpora, QA-pair stores and general-instruction datasets.
//!
//! All three are line-delimited JSON. Document and instruction records may
//! omit `id`; a missing id is synthesized as `<file name>:<line index>` with a
//! 0-based physical line index, so re-loading the same file always yields the
//! same ids.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::tokenize::Tokenizer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Llm,
    Regex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub source_doc: String,
    pub origin: Origin,
}

impl QaPair {
    pub fn new(
        question: impl Into<String>,
        answer: impl Into<String>,
        source_doc: impl Into<String>,
        origin: Origin,
    ) -> Self {
        Self {
            question: question.into(),
            answer: answer.into(),
            source_doc: source_doc.into(),
            origin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralInstruction {
    pub id: String,
    pub text: String,
    pub source_dataset: String,
}

/// Where a record came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub source: String,
    /// 1-based line number.
    pub line: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} line {}", self.source, self.line)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{at}: malformed record: {message}")]
    Malformed { at: Location, message: String },
    #[error("{at}: text is empty")]
    EmptyText { at: Location },
    #[error("duplicate id {id:?} at {first} and {second}")]
    DuplicateId {
        id: String,
        first: Location,
        second: Location,
    },
    #[error("{at}: question and answer must be non-empty")]
    EmptyPair { at: Location },
    #[error("{at}: QA pair refers to unknown document {doc_id:?}")]
    UnknownDocument { at: Location, doc_id: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// Raw document record as found in corpus dumps. Unknown fields are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct DocumentRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default)]
    pub meta: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct InstructionRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
}

pub fn parse_document_record(line: &str) -> Result<DocumentRecord, serde_json::Error> {
    serde_json::from_str(line)
}

pub fn parse_instruction_record(line: &str) -> Result<InstructionRecord, serde_json::Error> {
    serde_json::from_str(line)
}

pub fn parse_qa_record(line: &str) -> Result<QaPair, serde_json::Error> {
    serde_json::from_str(line)
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Iterates non-blank lines with their 0-based index.
fn for_each_line(
    path: &Path,
    mut f: impl FnMut(usize, &str) -> Result<(), CorpusError>,
) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        f(index, &line)?;
    }
    Ok(())
}

/// Tracks first-seen locations of ids across one load.
#[derive(Default)]
struct IdRegistry(HashMap<String, Location>);

impl IdRegistry {
    fn insert(&mut self, id: &str, at: Location) -> Result<(), CorpusError> {
        if let Some(first) = self.0.get(id) {
            return Err(CorpusError::DuplicateId {
                id: id.to_string(),
                first: first.clone(),
                second: at,
            });
        }
        self.0.insert(id.to_string(), at);
        Ok(())
    }
}

/// Loads a raw corpus dump, tagging every document with `domain`.
///
/// A record's own `domain` field, if any, is ignored in favour of the
/// argument.
pub fn load_corpus(path: &Path, domain: &str) -> Result<Vec<Document>, CorpusError> {
    load_documents_inner(path, Some(domain))
}

/// Reloads documents persisted with [`save_documents`], keeping their domain.
pub fn read_documents(path: &Path) -> Result<Vec<Document>, CorpusError> {
    load_documents_inner(path, None)
}

fn load_documents_inner(
    path: &Path,
    domain: Option<&str>,
) -> Result<Vec<Document>, CorpusError> {
    let label = file_label(path);
    let mut ids = IdRegistry::default();
    let mut docs = Vec::new();
    for_each_line(path, |index, line| {
        let at = Location {
            source: label.clone(),
            line: index + 1,
        };
        let record = parse_document_record(line).map_err(|e| CorpusError::Malformed {
            at: at.clone(),
            message: e.to_string(),
        })?;
        if record.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { at });
        }
        let id = record.id.unwrap_or_else(|| format!("{label}:{index}"));
        ids.insert(&id, at)?;
        docs.push(Document {
            id,
            text: record.text,
            domain: domain
                .map(str::to_string)
                .or(record.domain)
                .unwrap_or_default(),
            meta: record.meta,
        });
        Ok(())
    })?;
    Ok(docs)
}

/// Loads general-instruction files in argument order.
///
/// Ids are unique across the whole call, so passing one file twice is an
/// error.
pub fn load_instructions<P: AsRef<Path>>(
    paths: &[P],
) -> Result<Vec<GeneralInstruction>, CorpusError> {
    let mut ids = IdRegistry::default();
    let mut out = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let label = file_label(path);
        let dataset = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| label.clone());
        for_each_line(path, |index, line| {
            let at = Location {
                source: label.clone(),
                line: index + 1,
            };
            let record = parse_instruction_record(line).map_err(|e| CorpusError::Malformed {
                at: at.clone(),
                message: e.to_string(),
            })?;
            if record.text.trim().is_empty() {
                return Err(CorpusError::EmptyText { at });
            }
            let id = record.id.unwrap_or_else(|| format!("{label}:{index}"));
            ids.insert(&id, at)?;
            out.push(GeneralInstruction {
                id,
                text: record.text,
                source_dataset: dataset.clone(),
            });
            Ok(())
        })?;
    }
    Ok(out)
}

pub fn read_instructions(path: &Path) -> Result<Vec<GeneralInstruction>, CorpusError> {
    Ok(jsonl::read_records(path)?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

/// Loads QA pairs and checks each one against the known document ids.
pub fn load_pairs(path: &Path, docs: &[Document]) -> Result<Vec<QaPair>, CorpusError> {
    let known: std::collections::HashSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    let label = file_label(path);
    let mut out = Vec::new();
    for_each_line(path, |index, line| {
        let at = Location {
            source: label.clone(),
            line: index + 1,
        };
        let pair = parse_qa_record(line).map_err(|e| CorpusError::Malformed {
            at: at.clone(),
            message: e.to_string(),
        })?;
        if pair.question.trim().is_empty() || pair.answer.trim().is_empty() {
            return Err(CorpusError::EmptyPair { at });
        }
        if !known.contains(pair.source_doc.as_str()) {
            return Err(CorpusError::UnknownDocument {
                at,
                doc_id: pair.source_doc,
            });
        }
        out.push(pair);
        Ok(())
    })?;
    Ok(out)
}

pub fn save_documents(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    Ok(jsonl::write_records(path, docs)?)
}

pub fn save_instructions(path: &Path, items: &[GeneralInstruction]) -> Result<(), CorpusError> {
    Ok(jsonl::write_records(path, items)?)
}

pub fn save_pairs(path: &Path, pairs: &[QaPair]) -> Result<(), CorpusError> {
    Ok(jsonl::write_records(path, pairs)?)
}

/// Groups pairs by source document, keeping input order within each group.
pub fn pairs_by_doc(pairs: &[QaPair]) -> HashMap<&str, Vec<&QaPair>> {
    let mut map: HashMap<&str, Vec<&QaPair>> = HashMap::new();
    for p in pairs {
        map.entry(p.source_doc.as_str()).or_default().push(p);
    }
    map
}

/// Upper bounds (exclusive) of the length histogram buckets; the last bucket
/// is open-ended.
pub const HISTOGRAM_EDGES: [usize; 9] = [32, 64, 128, 256, 512, 1024, 2048, 4096, 8192];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub lower: usize,
    /// Exclusive; `None` for the open-ended last bucket.
    pub upper: Option<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub total_tokens: usize,
    pub length_histogram: Vec<HistogramBucket>,
    pub qa_coverage: f64,
    pub qa_pair_count: usize,
    pub max_pairs_per_doc: usize,
}

pub fn corpus_stats(docs: &[Document], pairs: &[QaPair], tok: &dyn Tokenizer) -> CorpusStats {
    let mut lower = 0;
    let mut buckets: Vec<HistogramBucket> = HISTOGRAM_EDGES
        .iter()
        .map(|&upper| {
            let b = HistogramBucket {
                lower,
                upper: Some(upper),
                count: 0,
            };
            lower = upper;
            b
        })
        .collect();
    buckets.push(HistogramBucket {
        lower,
        upper: None,
        count: 0,
    });

    let mut total_tokens = 0;
    for doc in docs {
        let n = tok.count(&doc.text);
        total_tokens += n;
        let slot = HISTOGRAM_EDGES
            .iter()
            .position(|&edge| n < edge)
            .unwrap_or(HISTOGRAM_EDGES.len());
        buckets[slot].count += 1;
    }

    let by_doc = pairs_by_doc(pairs);
    let covered = docs
        .iter()
        .filter(|d| by_doc.contains_key(d.id.as_str()))
        .count();
    let qa_coverage = if docs.is_empty() {
        0.0
    } else {
        covered as f64 / docs.len() as f64
    };

    CorpusStats {
        doc_count: docs.len(),
        total_tokens,
        length_histogram: buckets,
        qa_coverage,
        qa_pair_count: pairs.len(),
        max_pairs_per_doc: by_doc.values().map(Vec::len).max().unwrap_or(0),
    }
}
