use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot, Cluster, ClusterError, ClusteringParams, Embedding, SimilarityTarget};
use crate::seed;

/// One step of cluster growth. The seed event has no similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub cluster: usize,
    pub doc_id: String,
    pub similarity: Option<f64>,
    /// Running length after this document joined.
    pub total_length: usize,
    /// Member count after this document joined.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRun {
    pub clusters: Vec<Cluster>,
    pub audit: Vec<AuditEvent>,
}

/// Documents not yet assigned to a cluster.
///
/// Candidates are visited in ascending id order, which makes argmax ties
/// resolve to the smallest id.
#[derive(Debug, Clone)]
pub struct Pool<'a> {
    embeddings: &'a [Embedding],
    by_id: HashMap<&'a str, usize>,
    /// Embedding indices sorted by doc id.
    order: Vec<usize>,
    alive: Vec<bool>,
    remaining: usize,
}

impl<'a> Pool<'a> {
    pub fn new(embeddings: &'a [Embedding]) -> Result<Self, ClusterError> {
        let mut by_id = HashMap::with_capacity(embeddings.len());
        for (i, e) in embeddings.iter().enumerate() {
            if by_id.insert(e.doc_id.as_str(), i).is_some() {
                return Err(ClusterError::DuplicateDocument(e.doc_id.clone()));
            }
            if e.vector.len() != embeddings[0].vector.len() {
                return Err(ClusterError::Dimension(embeddings[0].vector.len(), e.vector.len()));
            }
        }
        let mut order: Vec<usize> = (0..embeddings.len()).collect();
        order.sort_by(|&a, &b| embeddings[a].doc_id.cmp(&embeddings[b].doc_id));
        Ok(Self {
            embeddings,
            by_id,
            order,
            alive: vec![true; embeddings.len()],
            remaining: embeddings.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.remaining
    }

    pub fn is_empty(&self) -> bool {
        self.remaining == 0
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.get(doc_id).is_some_and(|&i| self.alive[i])
    }

    /// Remaining doc ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = &'a str> + '_ {
        self.order
            .iter()
            .filter(|&&i| self.alive[i])
            .map(|&i| self.embeddings[i].doc_id.as_str())
    }

    fn take(&mut self, index: usize) {
        debug_assert!(self.alive[index]);
        self.alive[index] = false;
        self.remaining -= 1;
    }

    /// Highest `dot(candidate, direction)`, ties to the smallest id.
    fn best_match(&self, direction: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for &i in &self.order {
            if !self.alive[i] {
                continue;
            }
            let s = dot(&self.embeddings[i].vector, direction);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best
    }
}

fn unit(sum: &[f64]) -> Option<Vec<f64>> {
    let norm = dot(sum, sum).sqrt();
    (norm > 1e-12).then(|| sum.iter().map(|x| x / norm).collect())
}

fn length_of(lengths: &HashMap<String, usize>, id: &str) -> Result<usize, ClusterError> {
    lengths
        .get(id)
        .copied()
        .ok_or_else(|| ClusterError::MissingLength(id.to_string()))
}

/// Grows one cluster from `seed_id`, removing every member from `pool`.
///
/// Growth continues while the running length is below the threshold and the
/// member count is below the cap. Each step takes the remaining document most
/// similar to the cluster; if that similarity is below the cutoff, growth
/// stops. The last accepted document may push the length past the threshold.
pub fn grow_cluster(
    cluster_id: usize,
    seed_id: &str,
    pool: &mut Pool<'_>,
    params: &ClusteringParams,
    lengths: &HashMap<String, usize>,
    audit: &mut Vec<AuditEvent>,
) -> Result<Cluster, ClusterError> {
    let seed_index = match pool.by_id.get(seed_id) {
        Some(&i) if pool.alive[i] => i,
        _ => return Err(ClusterError::SeedNotInPool(seed_id.to_string())),
    };
    let embeddings = pool.embeddings;
    pool.take(seed_index);

    let seed_vec = &embeddings[seed_index].vector;
    let mut sum = seed_vec.clone();
    let mut centroid = seed_vec.clone();
    let mut members = vec![embeddings[seed_index].doc_id.clone()];
    let mut total_length = length_of(lengths, seed_id)?;
    audit.push(AuditEvent {
        cluster: cluster_id,
        doc_id: seed_id.to_string(),
        similarity: None,
        total_length,
        count: 1,
    });

    while total_length < params.length_threshold && members.len() < params.max_documents {
        let direction = match params.target {
            SimilarityTarget::Centroid => &centroid,
            SimilarityTarget::Seed => seed_vec,
        };
        let Some((index, similarity)) = pool.best_match(direction) else {
            break;
        };
        let similarity = similarity.clamp(-1.0, 1.0);
        if similarity < params.similarity_cutoff {
            break;
        }
        let doc_id = &embeddings[index].doc_id;
        total_length += length_of(lengths, doc_id)?;
        pool.take(index);
        members.push(doc_id.clone());
        for (s, x) in sum.iter_mut().zip(&embeddings[index].vector) {
            *s += x;
        }
        if let Some(c) = unit(&sum) {
            centroid = c;
        }
        audit.push(AuditEvent {
            cluster: cluster_id,
            doc_id: doc_id.clone(),
            similarity: Some(similarity),
            total_length,
            count: members.len(),
        });
    }

    Ok(Cluster {
        id: cluster_id,
        count: members.len(),
        member_ids: members,
        centroid,
        total_length,
    })
}

/// Partitions the corpus into clusters.
///
/// Seeds are drawn uniformly from the remaining documents (in ascending id
/// order) with a ChaCha8 stream seeded from `params.seed`.
pub fn cluster_corpus(
    embeddings: &[Embedding],
    lengths: &HashMap<String, usize>,
    params: &ClusteringParams,
) -> Result<ClusterRun, ClusterError> {
    params.validate()?;
    let mut pool = Pool::new(embeddings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(params.seed, 0));
    let mut clusters = Vec::new();
    let mut audit = Vec::new();
    while !pool.is_empty() {
        let pick = rng.gen_range(0..pool.len());
        let seed_id = pool.ids().nth(pick).expect("pick < pool.len()").to_string();
        let cluster = grow_cluster(clusters.len(), &seed_id, &mut pool, params, lengths, &mut audit)?;
        clusters.push(cluster);
    }
    Ok(ClusterRun { clusters, audit })
}

/// Checks that `clusters` partition `ids`.
pub fn is_partition(clusters: &[Cluster], ids: &[String]) -> bool {
    let mut seen = HashSet::new();
    for c in clusters {
        for m in &c.member_ids {
            if !seen.insert(m.as_str()) {
                return false;
            }
        }
    }
    seen.len() == ids.len() && ids.iter().all(|id| seen.contains(id.as_str()))
}
