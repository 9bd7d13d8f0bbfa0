use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PackError, PackItem, PackOutcome};
use crate::jsonl;

/// Joins member texts inside one training record.
pub const ITEM_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub text: String,
    pub token_count: usize,
    pub item_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackManifest {
    pub sequence_count: usize,
    pub capacity: usize,
    /// Mean of `total_tokens / capacity` over sequences; 0 with no sequences.
    pub utilization: f64,
    pub oversize_count: usize,
    pub oversize: Vec<String>,
}

pub fn training_records(
    outcome: &PackOutcome,
    items: &HashMap<&str, &PackItem>,
) -> Result<Vec<TrainingRecord>, PackError> {
    outcome
        .sequences
        .iter()
        .map(|seq| {
            let texts = seq
                .item_ids
                .iter()
                .map(|id| {
                    items
                        .get(id.as_str())
                        .map(|i| i.text.as_str())
                        .ok_or_else(|| PackError::MissingItem(id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(TrainingRecord {
                text: texts.join(ITEM_SEPARATOR),
                token_count: seq.total_tokens,
                item_ids: seq.item_ids.clone(),
            })
        })
        .collect()
}

pub fn emit_training_file(
    outcome: &PackOutcome,
    items: &HashMap<&str, &PackItem>,
    out: &Path,
) -> Result<PackManifest, PackError> {
    let records = training_records(outcome, items)?;
    jsonl::write_records(out, &records)?;
    Ok(manifest(outcome))
}

pub fn manifest(outcome: &PackOutcome) -> PackManifest {
    let n = outcome.sequences.len();
    let utilization = if n == 0 {
        0.0
    } else {
        outcome
            .sequences
            .iter()
            .map(|s| s.total_tokens as f64 / s.capacity as f64)
            .sum::<f64>()
            / n as f64
    };
    PackManifest {
        sequence_count: n,
        capacity: outcome.capacity,
        utilization,
        oversize_count: outcome.oversize.len(),
        oversize: outcome.oversize.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pack::{pack_all, ItemKind};
    use crate::tokenize::{Tokenizer, WhitespaceTokenizer};

    fn item(id: &str, n: usize) -> PackItem {
        PackItem {
            id: id.into(),
            text: vec![id; n].join(" "),
            token_count: n,
            kind: ItemKind::ClusterText,
        }
    }

    #[test]
    fn zero_sequences_give_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("train.jsonl");
        let outcome = pack_all(&[], 16).unwrap();
        let m = emit_training_file(&outcome, &HashMap::new(), &out).unwrap();
        assert_eq!(m.sequence_count, 0);
        assert_eq!(m.utilization, 0.0);
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
    }

    #[test]
    fn emitted_records_retokenize_within_capacity() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("train.jsonl");
        let items: Vec<PackItem> = [7, 3, 9, 4, 12, 1, 30]
            .iter()
            .enumerate()
            .map(|(i, &n)| item(&format!("i{i}"), n))
            .collect();
        let outcome = pack_all(&items, 16).unwrap();
        let by_id: HashMap<&str, &PackItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
        let m = emit_training_file(&outcome, &by_id, &out).unwrap();
        assert_eq!(m.oversize, ["i6"]);

        let tok = WhitespaceTokenizer;
        let rows: Vec<(usize, TrainingRecord)> = jsonl::read_records(&out).unwrap();
        assert_eq!(rows.len(), m.sequence_count);
        for (_, r) in rows {
            assert!(tok.count(&r.text) <= 16);
            assert_eq!(tok.count(&r.text), r.token_count);
        }
    }
}
