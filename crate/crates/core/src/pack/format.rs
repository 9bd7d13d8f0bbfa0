use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ItemKind, PackError, PackItem};
use crate::cluster::Cluster;
use crate::corpus::{Document, QaPair};
use crate::tokenize::Tokenizer;

/// Separator between documents, between pairs, and between the document
/// block and the pair block. Whitespace only, so it adds no tokens under the
/// whitespace tokenizer.
pub const BLOCK_SEPARATOR: &str = "\n\n";

pub fn render_pair(pair: &QaPair) -> String {
    format!("Question: {}\nAnswer: {}", pair.question, pair.answer)
}

pub fn render_pairs<'a>(pairs: impl IntoIterator<Item = &'a QaPair>) -> String {
    pairs
        .into_iter()
        .map(render_pair)
        .collect::<Vec<_>>()
        .join(BLOCK_SEPARATOR)
}

/// Member documents in order, then the union of their pairs in a seeded
/// shuffle.
pub fn cluster_text(docs: &[&Document], pairs: &[&QaPair], rng_seed: u64) -> String {
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut blocks: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
    blocks.extend(shuffled.into_iter().map(render_pair));
    blocks.join(BLOCK_SEPARATOR)
}

pub fn cluster_item_id(cluster: &Cluster) -> String {
    format!("cluster-{}", cluster.id)
}

fn members<'a>(
    ids: &[String],
    docs: &HashMap<&str, &'a Document>,
    pairs: &HashMap<&str, Vec<&'a QaPair>>,
) -> Result<(Vec<&'a Document>, Vec<&'a QaPair>), PackError> {
    let mut member_docs = Vec::with_capacity(ids.len());
    let mut member_pairs = Vec::new();
    for id in ids {
        let doc = docs
            .get(id.as_str())
            .ok_or_else(|| PackError::MissingDocument(id.clone()))?;
        member_docs.push(*doc);
        if let Some(ps) = pairs.get(id.as_str()) {
            member_pairs.extend(ps.iter().copied());
        }
    }
    Ok((member_docs, member_pairs))
}

pub fn format_cluster(
    cluster: &Cluster,
    docs: &HashMap<&str, &Document>,
    pairs: &HashMap<&str, Vec<&QaPair>>,
    rng_seed: u64,
    tok: &dyn Tokenizer,
) -> Result<PackItem, PackError> {
    let (member_docs, member_pairs) = members(&cluster.member_ids, docs, pairs)?;
    let text = cluster_text(&member_docs, &member_pairs, rng_seed);
    Ok(PackItem {
        id: cluster_item_id(cluster),
        token_count: tok.count(&text),
        text,
        kind: ItemKind::ClusterText,
    })
}

/// Formats a cluster, splitting it at document boundaries into consecutive
/// runs of members whenever the whole text would exceed `capacity`.
///
/// A single member that is too long on its own still yields an item over
/// capacity; the packer reports it.
pub fn format_cluster_split(
    cluster: &Cluster,
    docs: &HashMap<&str, &Document>,
    pairs: &HashMap<&str, Vec<&QaPair>>,
    rng_seed: u64,
    tok: &dyn Tokenizer,
    capacity: usize,
) -> Result<Vec<PackItem>, PackError> {
    let whole = format_cluster(cluster, docs, pairs, rng_seed, tok)?;
    if whole.token_count <= capacity {
        return Ok(vec![whole]);
    }
    let mut items = Vec::new();
    let mut run: Vec<String> = Vec::new();
    let emit = |run: &[String], items: &mut Vec<PackItem>| -> Result<(), PackError> {
        let (d, p) = members(run, docs, pairs)?;
        let part = items.len() as u64;
        let text = cluster_text(&d, &p, crate::seed::derive(rng_seed, part));
        items.push(PackItem {
            id: format!("{}.{}", cluster_item_id(cluster), part),
            token_count: tok.count(&text),
            text,
            kind: ItemKind::ClusterText,
        });
        Ok(())
    };
    for id in &cluster.member_ids {
        run.push(id.clone());
        let (d, p) = members(&run, docs, pairs)?;
        if run.len() > 1 && tok.count(&cluster_text(&d, &p, 0)) > capacity {
            let last = run.pop().expect("run has two or more members");
            emit(&run, &mut items)?;
            run = vec![last];
        }
    }
    emit(&run, &mut items)?;
    Ok(items)
}
