use std::time::Duration;

use serde_json::json;
use thiserror::Error;

use super::Embedding;
use crate::corpus::Document;
use crate::qagen::service::{with_retry, Backoff};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding service: {0}")]
    Service(String),
    #[error("embedding failed for {} document(s): {}: {message}", doc_ids.len(), doc_ids.join(", "))]
    Failed { doc_ids: Vec<String>, message: String },
    #[error("embedding for {doc_id} has dimension {got}, expected {expected}")]
    Dimension {
        doc_id: String,
        expected: usize,
        got: usize,
    },
    #[error("embedding for {doc_id} has zero or non-finite norm")]
    Degenerate { doc_id: String },
}

/// Maps a batch of texts to one vector per text.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError>;

    fn name(&self) -> String;
}

/// Offline embedder: feature-hashed term frequencies, L2-normalized.
///
/// Terms are lowercase alphanumeric runs; each is hashed with 64-bit FNV-1a
/// and counted into bucket `hash % dim`. Text with no alphanumeric run falls
/// back to whitespace-separated segments.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

pub const DEFAULT_HASH_DIM: usize = 256;

impl Default for HashEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_HASH_DIM,
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let lower = text.to_lowercase();
        let mut terms: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if terms.is_empty() {
            terms = lower.split_whitespace().collect();
        }
        let mut v = vec![0.0; self.dim];
        for t in terms {
            v[(fnv1a64(t.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        normalize(&mut v);
        v
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }

    fn name(&self) -> String {
        format!("hash-{}", self.dim)
    }
}

/// Scales `v` to unit length. Returns false, leaving `v` untouched, when the
/// norm is zero or not finite.
pub fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// OpenAI-compatible `embeddings` endpoint.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry_limit: u32,
    backoff: Backoff,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            retry_limit: 3,
            backoff: Backoff::default(),
            agent,
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_retry(mut self, retry_limit: u32, backoff: Backoff) -> Self {
        self.retry_limit = retry_limit;
        self.backoff = backoff;
        self
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(json!({"model": self.model, "input": texts}))
            .map_err(|e| EmbedError::Service(e.to_string()))?;
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Service(e.to_string()))?;
        parse_embedding_response(&value, texts.len())
    }
}

/// Reads `data[i].embedding` arrays, ordered by `data[i].index` when present.
pub fn parse_embedding_response(
    value: &serde_json::Value,
    expected: usize,
) -> Result<Vec<Vec<f64>>, EmbedError> {
    let data = value
        .get("data")
        .and_then(|d| d.as_array())
        .ok_or_else(|| EmbedError::Service("response has no data array".into()))?;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let index = item
            .get("index")
            .and_then(|i| i.as_u64())
            .map_or(pos, |i| i as usize);
        let vector = item
            .get("embedding")
            .and_then(|e| e.as_array())
            .ok_or_else(|| EmbedError::Service(format!("data[{pos}] has no embedding")))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| EmbedError::Service(format!("data[{pos}] has a non-numeric entry")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push((index, vector));
    }
    if rows.len() != expected {
        return Err(EmbedError::Service(format!(
            "expected {expected} embeddings, got {}",
            rows.len()
        )));
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        with_retry(self.retry_limit, &self.backoff, || self.request(texts)).0
    }

    fn name(&self) -> String {
        format!("http:{}", self.model)
    }
}

/// Embeds every document in batches of `batch` and normalizes each vector.
///
/// Batches that fail are collected; if any failed, the error lists every
/// affected document id.
pub fn embed_corpus(
    docs: &[Document],
    embedder: &dyn Embedder,
    batch: usize,
) -> Result<Vec<Embedding>, EmbedError> {
    let batch = batch.max(1);
    let mut out = Vec::with_capacity(docs.len());
    let mut failed: Vec<String> = Vec::new();
    let mut last_message = String::new();
    let mut dim: Option<usize> = None;
    for chunk in docs.chunks(batch) {
        let texts: Vec<&str> = chunk.iter().map(|d| d.text.as_str()).collect();
        let vectors = match embedder.embed(&texts) {
            Ok(v) if v.len() == chunk.len() => v,
            Ok(v) => {
                failed.extend(chunk.iter().map(|d| d.id.clone()));
                last_message = format!("expected {} vectors, got {}", chunk.len(), v.len());
                continue;
            }
            Err(e) => {
                failed.extend(chunk.iter().map(|d| d.id.clone()));
                last_message = e.to_string();
                continue;
            }
        };
        for (doc, mut vector) in chunk.iter().zip(vectors) {
            let expected = *dim.get_or_insert(vector.len());
            if vector.len() != expected {
                return Err(EmbedError::Dimension {
                    doc_id: doc.id.clone(),
                    expected,
                    got: vector.len(),
                });
            }
            if !normalize(&mut vector) {
                return Err(EmbedError::Degenerate {
                    doc_id: doc.id.clone(),
                });
            }
            out.push(Embedding {
                doc_id: doc.id.clone(),
                vector,
            });
        }
    }
    if !failed.is_empty() {
        return Err(EmbedError::Failed {
            doc_ids: failed,
            message: last_message,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            text: text.into(),
            domain: "x".into(),
            meta: None,
        }
    }

    struct Fixed(Vec<f64>);

    impl Embedder for Fixed {
        fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
            Ok(texts.iter().map(|_| self.0.clone()).collect())
        }
        fn name(&self) -> String {
            "fixed".into()
        }
    }

    /// Fails any batch containing a text that starts with "bad".
    struct Picky;

    impl Embedder for Picky {
        fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
            if texts.iter().any(|t| t.starts_with("bad")) {
                return Err(EmbedError::Service("503".into()));
            }
            Ok(texts.iter().map(|_| vec![1.0, 0.0]).collect())
        }
        fn name(&self) -> String {
            "picky".into()
        }
    }

    #[test]
    fn service_vectors_are_normalized() {
        let out = embed_corpus(&[doc("a", "t")], &Fixed(vec![0.0, 2.0, 0.0]), 8).unwrap();
        assert_eq!(out[0].vector, vec![0.0, 1.0, 0.0]);
        let norm: f64 = out[0].vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_is_rejected() {
        let err = embed_corpus(&[doc("a", "t")], &Fixed(vec![0.0; 4]), 8).unwrap_err();
        assert_eq!(err, EmbedError::Degenerate { doc_id: "a".into() });
    }

    #[test]
    fn failed_batches_list_doc_ids() {
        let docs = vec![doc("a", "ok"), doc("b", "bad"), doc("c", "ok"), doc("d", "ok")];
        match embed_corpus(&docs, &Picky, 2) {
            Err(EmbedError::Failed { doc_ids, .. }) => assert_eq!(doc_ids, ["a", "b"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hash_embedder_is_deterministic_and_unit() {
        let e = HashEmbedder::default();
        let a = e.embed_text("Insulin regulates glucose uptake.");
        let b = e.embed_text("Insulin regulates glucose uptake.");
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        // punctuation-only text still embeds
        let p = e.embed_text("?!");
        assert!((p.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn parses_service_response_by_index() {
        let v = json!({"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]});
        let rows = parse_embedding_response(&v, 2).unwrap();
        assert_eq!(rows[0], vec![1.0, 0.0]);
        assert!(parse_embedding_response(&v, 3).is_err());
    }
}
