//! Length-bounded similarity clustering.
//!
//! Documents are embedded, then clusters are grown greedily: a random seed
//! document starts a cluster and the most similar remaining document joins
//! while the cluster is under its token and document budgets and the
//! similarity stays at or above the cutoff.

pub mod embed;
pub mod grow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, QaPair};
use crate::pack::format::render_pairs;
use crate::tokenize::Tokenizer;

pub use embed::{embed_corpus, EmbedError, Embedder, HashEmbedder, HttpEmbedder};
pub use grow::{cluster_corpus, grow_cluster, AuditEvent, ClusterRun, Pool};

pub const DEFAULT_SIMILARITY_CUTOFF: f64 = 0.7;
pub const DEFAULT_MAX_DOCUMENTS: usize = 16;
pub const DEFAULT_LENGTH_THRESHOLD: usize = 3072;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub doc_id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("seed document {0} is not in the pool")]
    SeedNotInPool(String),
    #[error("no length recorded for document {0}")]
    MissingLength(String),
    #[error("duplicate embedding for document {0}")]
    DuplicateDocument(String),
    #[error("invalid clustering parameters: {0}")]
    Params(String),
}

/// How a candidate's similarity to the growing cluster is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityTarget {
    /// Cosine against the normalized mean of the current members.
    #[default]
    Centroid,
    /// Cosine against the seed document only.
    Seed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringParams {
    /// Token budget; growth continues only while the running length is below it.
    pub length_threshold: usize,
    pub max_documents: usize,
    pub similarity_cutoff: f64,
    pub seed: u64,
    #[serde(default)]
    pub target: SimilarityTarget,
}

impl ClusteringParams {
    pub fn new(length_threshold: usize, max_documents: usize, seed: u64) -> Self {
        Self {
            length_threshold,
            max_documents,
            similarity_cutoff: DEFAULT_SIMILARITY_CUTOFF,
            seed,
            target: SimilarityTarget::Centroid,
        }
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.length_threshold == 0 {
            return Err(ClusterError::Params("length_threshold must be positive".into()));
        }
        if self.max_documents == 0 {
            return Err(ClusterError::Params("max_documents must be at least 1".into()));
        }
        let tau = self.similarity_cutoff;
        if !(tau > -1.0 && tau <= 1.0) {
            return Err(ClusterError::Params(format!(
                "similarity_cutoff {tau} is outside (-1, 1]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub member_ids: Vec<String>,
    pub centroid: Vec<f64>,
    pub total_length: usize,
    pub count: usize,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two unit embeddings, clamped to [-1, 1].
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, ClusterError> {
    if a.vector.len() != b.vector.len() {
        return Err(ClusterError::Dimension(a.vector.len(), b.vector.len()));
    }
    Ok(dot(&a.vector, &b.vector).clamp(-1.0, 1.0))
}

/// Token length a document contributes to a cluster: its text plus its
/// rendered QA pairs.
pub fn doc_length(doc: &Document, pairs: &[&QaPair], tok: &dyn Tokenizer) -> usize {
    let text = tok.count(&doc.text);
    if pairs.is_empty() {
        text
    } else {
        text + tok.count(&render_pairs(pairs.iter().copied()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;
    use crate::tokenize::WhitespaceTokenizer;

    fn emb(v: &[f64]) -> Embedding {
        Embedding {
            doc_id: "x".into(),
            vector: v.to_vec(),
        }
    }

    #[test]
    fn cosine_basics() {
        let v = emb(&[0.6, 0.8]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(
            cosine_similarity(&emb(&[1.0]), &emb(&[1.0, 0.0])),
            Err(ClusterError::Dimension(1, 2))
        );
    }

    #[test]
    fn cosine_matches_hand_arithmetic() {
        // (0.6, 0.8, 0) . (0, 0.6, 0.8) = 0.48
        let s = cosine_similarity(&emb(&[0.6, 0.8, 0.0]), &emb(&[0.0, 0.6, 0.8])).unwrap();
        assert!((s - 0.48).abs() < 1e-12);
    }

    #[test]
    fn doc_length_is_additive() {
        let tok = WhitespaceTokenizer;
        let doc = Document {
            id: "d".into(),
            text: "one two three four five six seven eight nine ten".into(),
            domain: "x".into(),
            meta: None,
        };
        assert_eq!(doc_length(&doc, &[], &tok), 10);
        let p1 = QaPair::new("a b c", "d e f g h", "d", Origin::Llm);
        let p2 = QaPair::new("i", "j k", "d", Origin::Llm);
        // rendered pairs: (1 + 3) + (1 + 5) and (1 + 1) + (1 + 2)
        assert_eq!(doc_length(&doc, &[&p1, &p2], &tok), 25);
    }

    #[test]
    fn params_validation() {
        assert!(ClusteringParams::new(100, 4, 0).validate().is_ok());
        assert!(ClusteringParams::new(0, 4, 0).validate().is_err());
        assert!(ClusteringParams::new(100, 0, 0).validate().is_err());
        let mut p = ClusteringParams::new(100, 4, 0);
        p.similarity_cutoff = -1.0;
        assert!(p.validate().is_err());
        p.similarity_cutoff = 1.0;
        assert!(p.validate().is_ok());
    }
}
