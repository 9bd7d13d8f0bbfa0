//! Cluster formatting, instruction mixing and knapsack packing into
//! fixed-capacity training sequences.

pub mod emit;
pub mod format;
pub mod knapsack;
pub mod mix;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::JsonlError;

pub use emit::{emit_training_file, PackManifest, TrainingRecord};
pub use format::{format_cluster, format_cluster_split, render_pair, render_pairs};
pub use knapsack::{knapsack_select, subset_sum_select};
pub use mix::{mix_items, MixConfig, MixOutcome, DEFAULT_GENERAL_TOKEN_FRACTION};

#[derive(Debug, Error)]
pub enum PackError {
    #[error("cluster member {0} has no document")]
    MissingDocument(String),
    #[error("sequence refers to unknown item {0}")]
    MissingItem(String),
    #[error("capacity must be at least 1")]
    ZeroCapacity,
    #[error("item {0} has no tokens")]
    EmptyItem(String),
    #[error("duplicate item id {0}")]
    DuplicateItem(String),
    #[error(transparent)]
    Write(#[from] JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    ClusterText,
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackItem {
    pub id: String,
    pub text: String,
    pub token_count: usize,
    pub kind: ItemKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub item_ids: Vec<String>,
    pub total_tokens: usize,
    pub capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackOutcome {
    pub capacity: usize,
    pub sequences: Vec<PackedSequence>,
    /// Items longer than the capacity, in input order.
    pub oversize: Vec<String>,
}

/// Fills sequences one at a time with an exact knapsack over the remaining
/// items until none are left.
///
/// Items over capacity are set aside as oversize. Sequence members keep the
/// relative input order.
pub fn pack_all(items: &[PackItem], capacity: usize) -> Result<PackOutcome, PackError> {
    if capacity == 0 {
        return Err(PackError::ZeroCapacity);
    }
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item.id.as_str()) {
            return Err(PackError::DuplicateItem(item.id.clone()));
        }
        if item.token_count == 0 {
            return Err(PackError::EmptyItem(item.id.clone()));
        }
    }
    let (mut pool, oversize): (Vec<&PackItem>, Vec<&PackItem>) =
        items.iter().partition(|i| i.token_count <= capacity);

    let mut sequences = Vec::new();
    while !pool.is_empty() {
        let weights: Vec<usize> = pool.iter().map(|i| i.token_count).collect();
        let picked = subset_sum_select(&weights, capacity);
        debug_assert!(!picked.is_empty(), "every pooled item fits on its own");
        let chosen: HashSet<usize> = picked.iter().copied().collect();
        sequences.push(PackedSequence {
            item_ids: picked.iter().map(|&k| pool[k].id.clone()).collect(),
            total_tokens: picked.iter().map(|&k| weights[k]).sum(),
            capacity,
        });
        let mut k = 0;
        pool.retain(|_| {
            let keep = !chosen.contains(&k);
            k += 1;
            keep
        });
    }
    Ok(PackOutcome {
        capacity,
        sequences,
        oversize: oversize.iter().map(|i| i.id.clone()).collect(),
    })
}
