//! Individual pipeline stages with digest-based reuse.
//!
//! A stage's record under `stages/` stores the digest of its inputs and of
//! each output file. A later invocation with the same input digest is skipped
//! as long as every recorded output still hashes to the recorded value.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cluster::{
    cluster_corpus, doc_length, embed_corpus, ClusterError, EmbedError, Embedder, HashEmbedder,
    HttpEmbedder,
};
use crate::corpus::{self, pairs_by_doc, CorpusError, Document, QaPair};
use crate::jsonl::{self, JsonlError};
use crate::pack::{
    emit_training_file, format_cluster, format_cluster_split, mix_items, pack_all, MixConfig,
    PackError, PackItem,
};
use crate::qagen::{
    export_distillation, generate_qa, ChatClientConfig, ChatService, DistillError,
    GenerationCache, GenerationStatus, HttpChatService, MockChatService, PromptTemplate,
    MOCK_ENDPOINT,
};
use crate::readcompre::{apply_rules, RuleError, RuleSet};
use crate::seed;
use crate::store::{self, Store};
use crate::tokenize::Tokenizer;

use super::config::{ClusterConfig, PackConfig};

/// Environment variable holding the bearer token for HTTP services.
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StageError + '_ {
    move |source| StageError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Reused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub status: StageStatus,
    pub input_digest: String,
    /// Logical output name to content digest.
    pub outputs: BTreeMap<String, String>,
    pub summary: Value,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageRecord {
    input_digest: String,
    outputs: BTreeMap<String, String>,
    summary: Value,
    warnings: Vec<String>,
}

/// What a stage body hands back.
pub struct StageResult {
    pub summary: Value,
    pub warnings: Vec<String>,
    /// A result built from transient failures is not recorded for reuse.
    pub reusable: bool,
}

impl StageResult {
    fn new(summary: Value) -> Self {
        Self {
            summary,
            warnings: Vec::new(),
            reusable: true,
        }
    }
}

/// Digest of an optional input file; `absent` when it does not exist.
pub fn input_file_digest(path: &Path) -> Result<String, StageError> {
    if !path.exists() {
        return Ok("absent".into());
    }
    store::file_digest(path).map_err(io_err(path))
}

fn reusable_record(store: &Store, stage: &str, input_digest: &str, outputs: &[(&str, PathBuf)]) -> Option<StageRecord> {
    let text = std::fs::read_to_string(store.stage_record_path(stage)).ok()?;
    let record: StageRecord = serde_json::from_str(&text).ok()?;
    if record.input_digest != input_digest || record.outputs.len() != outputs.len() {
        return None;
    }
    for (name, path) in outputs {
        let expected = record.outputs.get(*name)?;
        if store::file_digest(path).ok().as_ref() != Some(expected) {
            return None;
        }
    }
    Some(record)
}

/// Runs `body` unless a matching stage record shows its outputs are current.
pub fn run_stage(
    store: &Store,
    stage: &str,
    input_digest: String,
    outputs: &[(&str, PathBuf)],
    force: bool,
    body: impl FnOnce() -> Result<StageResult, StageError>,
) -> Result<StageReport, StageError> {
    if !force {
        if let Some(record) = reusable_record(store, stage, &input_digest, outputs) {
            info!("{stage}: inputs unchanged, reusing outputs");
            return Ok(StageReport {
                stage: stage.to_string(),
                status: StageStatus::Reused,
                input_digest,
                outputs: record.outputs,
                summary: record.summary,
                warnings: record.warnings,
            });
        }
    }
    let record_path = store.stage_record_path(stage);
    let _ = std::fs::remove_file(&record_path);
    let result = body()?;
    for w in &result.warnings {
        warn!("{stage}: {w}");
    }
    let mut digests = BTreeMap::new();
    for (name, path) in outputs {
        digests.insert(name.to_string(), store::file_digest(path).map_err(io_err(path))?);
    }
    if result.reusable {
        let record = StageRecord {
            input_digest: input_digest.clone(),
            outputs: digests.clone(),
            summary: result.summary.clone(),
            warnings: result.warnings.clone(),
        };
        store::write_json(&record_path, &record).map_err(io_err(&record_path))?;
    }
    Ok(StageReport {
        stage: stage.to_string(),
        status: StageStatus::Ran,
        input_digest,
        outputs: digests,
        summary: result.summary,
        warnings: result.warnings,
    })
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads the raw corpus and instruction files into the store.
pub fn ingest(
    store: &Store,
    corpus_path: &Path,
    domain: &str,
    instruction_paths: &[PathBuf],
    force: bool,
) -> Result<StageReport, StageError> {
    let mut inputs = vec![json!({
        "corpus": file_label(corpus_path),
        "digest": input_file_digest(corpus_path)?,
    })];
    for p in instruction_paths {
        inputs.push(json!({"instructions": file_label(p), "digest": input_file_digest(p)?}));
    }
    let digest = store::digest_json(&json!({"domain": domain, "inputs": inputs}));
    let outputs = [
        ("documents", store.path(store::DOCUMENTS)),
        ("instructions", store.path(store::INSTRUCTIONS)),
    ];
    run_stage(store, "ingest", digest, &outputs, force, || {
        let docs = corpus::load_corpus(corpus_path, domain)?;
        let instructions = corpus::load_instructions(instruction_paths)?;
        corpus::save_documents(&outputs[0].1, &docs)?;
        corpus::save_instructions(&outputs[1].1, &instructions)?;
        let mut result = StageResult::new(json!({
            "documents": docs.len(),
            "instructions": instructions.len(),
        }));
        if docs.is_empty() {
            result.warnings.push("corpus has no documents".into());
        }
        Ok(result)
    })
}

/// Chat service for an endpoint: the built-in mock for `mock://`, HTTP otherwise.
pub fn chat_service(endpoint: &str, seed: Option<u64>) -> Box<dyn ChatService> {
    if endpoint == MOCK_ENDPOINT {
        Box::new(MockChatService::new())
    } else {
        Box::new(
            HttpChatService::new(endpoint)
                .with_api_key(std::env::var(API_KEY_ENV).ok())
                .with_seed(seed),
        )
    }
}

/// Embedder for a spec: `hash` for the offline hash embedder, a URL otherwise.
pub fn embedder(cfg: &ClusterConfig, retry: u32) -> Box<dyn Embedder> {
    if cfg.embedder == "hash" {
        Box::new(HashEmbedder::new(cfg.embedding_dim))
    } else {
        let model = cfg
            .embedding_model
            .clone()
            .unwrap_or_else(|| "text-embedding-3-small".to_string());
        Box::new(
            HttpEmbedder::new(cfg.embedder.clone(), model)
                .with_api_key(std::env::var(API_KEY_ENV).ok())
                .with_retry(retry, Default::default()),
        )
    }
}

/// Generates QA pairs with a chat model. Writes `qa.jsonl` and the per-document
/// generation records; successful replies are cached across runs.
pub fn genqa(
    store: &Store,
    template: &PromptTemplate,
    client: &ChatClientConfig,
    service: &dyn ChatService,
    force: bool,
) -> Result<StageReport, StageError> {
    let digest = store::digest_json(&json!({
        "documents": input_file_digest(&store.path(store::DOCUMENTS))?,
        "template": template.digest(),
        "endpoint": client.endpoint,
        "model": client.model_name,
    }));
    let outputs = [
        ("qa", store.path(store::QA_PAIRS)),
        ("records", store.path(store::GENERATION_RECORDS)),
    ];
    run_stage(store, "genqa", digest, &outputs, force, || {
        let docs = store.documents()?;
        let cache = GenerationCache::open(&store.path(store::GENERATION_CACHE))?;
        let records = generate_qa(&docs, template, service, client, &cache)?;
        let pairs: Vec<QaPair> = records.iter().flat_map(|r| r.pairs.iter().cloned()).collect();
        corpus::save_pairs(&outputs[0].1, &pairs)?;
        jsonl::write_records(&outputs[1].1, &records)?;
        let count = |s: GenerationStatus| records.iter().filter(|r| r.status == s).count();
        let (ok, parse_failed, service_failed) = (
            count(GenerationStatus::Ok),
            count(GenerationStatus::ParseFailed),
            count(GenerationStatus::ServiceFailed),
        );
        let mut result = StageResult::new(json!({
            "documents": docs.len(),
            "ok": ok,
            "parse_failed": parse_failed,
            "service_failed": service_failed,
            "pairs": pairs.len(),
        }));
        if parse_failed > 0 {
            result
                .warnings
                .push(format!("{parse_failed} replies could not be parsed"));
        }
        if service_failed > 0 {
            result.warnings.push(format!(
                "{service_failed} documents failed at the service; rerun to retry them"
            ));
            result.reusable = false;
        }
        Ok(result)
    })
}

/// Extracts QA pairs with regex rules. `rules` is a TOML rule file; the
/// built-in rule is used when it is `None`.
pub fn regex_qa(store: &Store, rules: Option<&Path>, force: bool) -> Result<StageReport, StageError> {
    // The rule text is read once so the digest and the compiled rules agree.
    let (set, rules_digest) = match rules {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            let set = RuleSet::from_toml_named(&text, &p.display().to_string())?;
            (set, store::digest_bytes(text.as_bytes()))
        }
        None => (RuleSet::builtin(), "builtin".into()),
    };
    let digest = store::digest_json(&json!({
        "documents": input_file_digest(&store.path(store::DOCUMENTS))?,
        "rules": rules_digest,
    }));
    let outputs = [("qa", store.path(store::QA_PAIRS))];
    run_stage(store, "regex_qa", digest, &outputs, force, || {
        let docs = store.documents()?;
        let mut pairs = Vec::new();
        let mut covered = 0usize;
        for doc in &docs {
            let found = apply_rules(doc, &set);
            covered += usize::from(!found.is_empty());
            pairs.extend(found);
        }
        corpus::save_pairs(&outputs[0].1, &pairs)?;
        let mut result = StageResult::new(json!({
            "documents": docs.len(),
            "documents_with_pairs": covered,
            "pairs": pairs.len(),
            "rules": set.names().collect::<Vec<_>>(),
        }));
        if pairs.is_empty() && !docs.is_empty() {
            result.warnings.push("no rule matched any document".into());
        }
        Ok(result)
    })
}

/// Samples generation records into a prompt/completion file for distillation.
pub fn distill(store: &Store, n: usize, rng_seed: u64, out: &Path) -> Result<usize, StageError> {
    let records = store.generation_records()?;
    Ok(export_distillation(&records, n, rng_seed, out)?)
}

/// Per-document token length: text plus rendered QA pairs.
pub fn document_lengths(
    docs: &[Document],
    pairs: &[QaPair],
    tok: &dyn Tokenizer,
) -> HashMap<String, usize> {
    let by_doc = pairs_by_doc(pairs);
    docs.iter()
        .map(|d| {
            let own = by_doc.get(d.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            (d.id.clone(), doc_length(d, own, tok))
        })
        .collect()
}

/// Embeds documents and grows length-bounded similarity clusters.
pub fn cluster(
    store: &Store,
    cfg: &ClusterConfig,
    embedder: &dyn Embedder,
    tok: &dyn Tokenizer,
    force: bool,
) -> Result<StageReport, StageError> {
    let params = cfg.params();
    params.validate()?;
    let digest = store::digest_json(&json!({
        "documents": input_file_digest(&store.path(store::DOCUMENTS))?,
        "qa": input_file_digest(&store.path(store::QA_PAIRS))?,
        "params": params,
        "embedder": embedder.name(),
        "tokenizer": tok.name(),
    }));
    let outputs = [
        ("clusters", store.path(store::CLUSTERS)),
        ("audit", store.path(store::CLUSTER_AUDIT)),
    ];
    run_stage(store, "cluster", digest, &outputs, force, || {
        let docs = store.documents()?;
        let pairs = store.pairs(&docs)?;
        let lengths = document_lengths(&docs, &pairs, tok);
        let embeddings = embed_corpus(&docs, embedder, cfg.batch)?;
        let run = cluster_corpus(&embeddings, &lengths, &params)?;
        jsonl::write_records(&outputs[0].1, &run.clusters)?;
        jsonl::write_records(&outputs[1].1, &run.audit)?;
        let singletons = run.clusters.iter().filter(|c| c.count == 1).count();
        let over = run
            .clusters
            .iter()
            .filter(|c| c.total_length > params.length_threshold)
            .count();
        Ok(StageResult::new(json!({
            "documents": docs.len(),
            "clusters": run.clusters.len(),
            "singletons": singletons,
            "over_length_threshold": over,
            "max_count": run.clusters.iter().map(|c| c.count).max().unwrap_or(0),
        })))
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PackReport {
    pub cluster_items: usize,
    pub instruction_items: usize,
    pub cluster_tokens: usize,
    pub instruction_tokens: usize,
    pub achieved_fraction: f64,
    pub instructions_exhausted: bool,
    #[serde(flatten)]
    pub packing: crate::pack::PackManifest,
}

/// Formats clusters, mixes in general instructions and packs everything into
/// fixed-capacity training sequences written to `out`.
pub fn pack(
    store: &Store,
    cfg: &PackConfig,
    tok: &dyn Tokenizer,
    out: &Path,
    force: bool,
) -> Result<StageReport, StageError> {
    let mix = MixConfig::new(cfg.general_fraction, cfg.seed).map_err(StageError::Invalid)?;
    if cfg.capacity == 0 {
        return Err(PackError::ZeroCapacity.into());
    }
    let digest = store::digest_json(&json!({
        "documents": input_file_digest(&store.path(store::DOCUMENTS))?,
        "instructions": input_file_digest(&store.path(store::INSTRUCTIONS))?,
        "qa": input_file_digest(&store.path(store::QA_PAIRS))?,
        "clusters": input_file_digest(&store.path(store::CLUSTERS))?,
        "params": cfg,
        "tokenizer": tok.name(),
    }));
    let outputs = [
        ("training_file", out.to_path_buf()),
        ("report", store.path(store::PACK_REPORT)),
    ];
    run_stage(store, "pack", digest, &outputs, force, || {
        let docs = store.documents()?;
        let pairs = store.pairs(&docs)?;
        let instructions = store.instructions()?;
        let clusters = store.clusters()?;
        if clusters.is_empty() && !docs.is_empty() {
            return Err(StageError::Invalid("no clusters in store; run cluster first".into()));
        }
        let doc_map: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
        let pair_map = pairs_by_doc(&pairs);
        let mut cluster_items: Vec<PackItem> = Vec::new();
        for c in &clusters {
            let fmt_seed = seed::derive(cfg.seed, c.id as u64);
            if cfg.split_oversize {
                cluster_items.extend(format_cluster_split(c, &doc_map, &pair_map, fmt_seed, tok, cfg.capacity)?);
            } else {
                cluster_items.push(format_cluster(c, &doc_map, &pair_map, fmt_seed, tok)?);
            }
        }
        let cluster_count = cluster_items.len();
        let mixed = mix_items(cluster_items, &instructions, &mix, tok);
        let outcome = pack_all(&mixed.items, cfg.capacity)?;
        let by_id: HashMap<&str, &PackItem> = mixed.items.iter().map(|i| (i.id.as_str(), i)).collect();
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let packing = emit_training_file(&outcome, &by_id, out)?;
        let report = PackReport {
            cluster_items: cluster_count,
            instruction_items: mixed.items.len() - cluster_count,
            cluster_tokens: mixed.cluster_tokens,
            instruction_tokens: mixed.instruction_tokens,
            achieved_fraction: mixed.achieved_fraction,
            instructions_exhausted: mixed.clamped,
            packing,
        };
        store::write_json(&outputs[1].1, &report).map_err(io_err(&outputs[1].1))?;
        let mut result = StageResult::new(serde_json::to_value(&report).expect("report serializes"));
        if report.packing.oversize_count > 0 {
            result.warnings.push(format!(
                "{} items exceed capacity {} and were left out: {}",
                report.packing.oversize_count,
                cfg.capacity,
                report.packing.oversize.join(", ")
            ));
        }
        if mixed.clamped && cfg.general_fraction > 0.0 {
            result.warnings.push(format!(
                "instruction supply exhausted at fraction {:.4} (target {})",
                mixed.achieved_fraction, cfg.general_fraction
            ));
        }
        Ok(result)
    })
}
