//! Export of teacher generations as prompt/completion training pairs for a
//! smaller generator model.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cache::GenerationRecord;
use super::repair::{canonical_serialize, RawPair};
use crate::jsonl::{self, JsonlError};

/// Number of documents sampled for distillation unless overridden.
pub const DEFAULT_DISTILL_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("requested {requested} examples but only {available} ok records are available")]
    Insufficient { requested: usize, available: usize },
    #[error(transparent)]
    Write(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillExample {
    pub prompt: String,
    pub completion: String,
}

/// Samples `n` ok records uniformly without replacement and returns them as
/// examples ordered by document id.
pub fn sample_distillation(
    records: &[GenerationRecord],
    n: usize,
    rng_seed: u64,
) -> Result<Vec<DistillExample>, DistillError> {
    let mut ok: Vec<&GenerationRecord> = records.iter().filter(|r| r.is_ok()).collect();
    if n > ok.len() {
        return Err(DistillError::Insufficient {
            requested: n,
            available: ok.len(),
        });
    }
    ok.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut picked = index::sample(&mut rng, ok.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| {
            let r = ok[i];
            let pairs: Vec<RawPair> = r
                .pairs
                .iter()
                .map(|p| RawPair {
                    question: p.question.clone(),
                    answer: p.answer.clone(),
                })
                .collect();
            DistillExample {
                prompt: r.prompt.clone(),
                completion: canonical_serialize(&pairs),
            }
        })
        .collect())
}

pub fn export_distillation(
    records: &[GenerationRecord],
    n: usize,
    rng_seed: u64,
    out: &Path,
) -> Result<usize, DistillError> {
    let examples = sample_distillation(records, n, rng_seed)?;
    jsonl::write_records(out, &examples)?;
    Ok(examples.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Origin, QaPair};
    use crate::qagen::cache::GenerationStatus;
    use crate::qagen::repair::parse_qa_response;

    fn records(n: usize) -> Vec<GenerationRecord> {
        (0..n)
            .map(|i| {
                let failed = i % 10 == 9;
                GenerationRecord {
                    doc_id: format!("doc{i:04}"),
                    prompt: format!("prompt {i}"),
                    raw_response: String::new(),
                    pairs: if failed {
                        vec![]
                    } else {
                        vec![QaPair::new(format!("q{i}"), format!("a{i}"), format!("doc{i:04}"), Origin::Llm)]
                    },
                    status: if failed {
                        GenerationStatus::ParseFailed
                    } else {
                        GenerationStatus::Ok
                    },
                    attempt_count: 1,
                    repairs: vec![],
                    error: None,
                }
            })
            .collect()
    }

    #[test]
    fn zero_examples_gives_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d.jsonl");
        assert_eq!(export_distillation(&records(5), 0, 1, &out).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
    }

    #[test]
    fn exhaustive_request_returns_all_ok_records_by_id() {
        let mut recs = records(20);
        recs.reverse();
        let ex = sample_distillation(&recs, 18, 3).unwrap();
        let prompts: Vec<_> = ex.iter().map(|e| e.prompt.clone()).collect();
        let want: Vec<_> = (0..20).filter(|i| i % 10 != 9).map(|i| format!("prompt {i}")).collect();
        assert_eq!(prompts, want);
        let parsed = parse_qa_response(&ex[0].completion).unwrap();
        assert_eq!(parsed.pairs[0].question, "q0");
    }

    #[test]
    fn insufficient_records_reports_available() {
        match sample_distillation(&records(10), 10, 0) {
            Err(DistillError::Insufficient { requested: 10, available: 9 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let recs = records(1000);
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        export_distillation(&recs, 100, 42, &a).unwrap();
        export_distillation(&recs, 100, 42, &b).unwrap();
        let bytes = std::fs::read(&a).unwrap();
        assert_eq!(bytes, std::fs::read(&b).unwrap());
        assert_eq!(bytes.iter().filter(|&&c| c == b'\n').count(), 100);
        let c = dir.path().join("c.jsonl");
        export_distillation(&recs, 100, 43, &c).unwrap();
        assert_ne!(bytes, std::fs::read(&c).unwrap());
    }
}
