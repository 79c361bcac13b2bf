use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::KnowledgeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// Seeds level sampling so builds are reproducible.
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            m: 10,
            ef_construction: 100,
            ef_search: 64,
            seed: 42,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if self.m < 2 {
            return Err(KnowledgeError::InvalidConfig(format!("M = {} < 2", self.m)));
        }
        if self.ef_construction < self.m {
            return Err(KnowledgeError::InvalidConfig(format!(
                "ef_construction = {} < M = {}",
                self.ef_construction, self.m
            )));
        }
        if self.ef_search == 0 {
            return Err(KnowledgeError::InvalidConfig("ef_search = 0".into()));
        }
        Ok(())
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 { 2 * self.m } else { self.m }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Cosine HNSW over unit vectors. Node ids are insertion positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Hnsw {
    config: IndexConfig,
    dim: usize,
    vectors: Vec<f64>,
    /// `links[node][layer]`.
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
}

impl Hnsw {
    pub fn new(config: IndexConfig, dim: usize) -> Result<Self, KnowledgeError> {
        config.validate()?;
        Ok(Self {
            config,
            dim,
            vectors: Vec::new(),
            links: Vec::new(),
            entry: None,
        })
    }

    /// Rebuilds from persisted parts, checking structural consistency.
    pub fn from_parts(
        config: IndexConfig,
        dim: usize,
        vectors: Vec<f64>,
        links: Vec<Vec<Vec<u32>>>,
        entry: Option<u32>,
    ) -> Result<Self, KnowledgeError> {
        config.validate()?;
        let corrupt = |m: String| Err(KnowledgeError::CorruptIndex(m));
        let n = links.len();
        if dim == 0 || vectors.len() != n * dim {
            return corrupt(format!("{} vector values for {n} nodes of dimension {dim}", vectors.len()));
        }
        if (n == 0) != entry.is_none() || entry.is_some_and(|e| e as usize >= n) {
            return corrupt("bad entry point".into());
        }
        for (i, node) in links.iter().enumerate() {
            if node.is_empty() {
                return corrupt(format!("node {i} has no layers"));
            }
            for (layer, list) in node.iter().enumerate() {
                if list.len() > config.max_links(layer) {
                    return corrupt(format!("node {i} layer {layer} has {} links", list.len()));
                }
                if list.iter().any(|&j| j as usize >= n || links[j as usize].len() <= layer) {
                    return corrupt(format!("node {i} layer {layer} links to a missing node"));
                }
            }
        }
        if let Some(e) = entry {
            if links.iter().any(|l| l.len() > links[e as usize].len()) {
                return corrupt("entry point is not on the top layer".into());
            }
        }
        Ok(Self {
            config,
            dim,
            vectors,
            links,
            entry,
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn links(&self) -> &[Vec<Vec<u32>>] {
        &self.links
    }

    pub fn entry(&self) -> Option<u32> {
        self.entry
    }

    pub fn vector(&self, id: u32) -> &[f64] {
        let i = id as usize * self.dim;
        &self.vectors[i..i + self.dim]
    }

    fn distance(&self, q: &[f64], id: u32) -> Dist {
        let dot: f64 = q.iter().zip(self.vector(id)).map(|(a, b)| a * b).sum();
        Dist(1.0 - dot)
    }

    /// Geometric level with parameter 1 / ln M, derived from the node id.
    fn level_for(&self, id: usize) -> usize {
        let bits = splitmix(self.config.seed ^ splitmix(id as u64));
        let u = ((bits >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        let ml = 1.0 / (self.config.m as f64).ln();
        (-u.ln() * ml).floor() as usize
    }

    /// Beam search on one layer; nearest first.
    fn search_layer(&self, q: &[f64], entry: &[(Dist, u32)], ef: usize, layer: usize) -> Vec<(Dist, u32)> {
        let mut visited = vec![false; self.len()];
        let mut candidates: BinaryHeap<Reverse<(Dist, u32)>> = BinaryHeap::new();
        let mut found: BinaryHeap<(Dist, u32)> = BinaryHeap::new();
        for &(d, id) in entry {
            if !visited[id as usize] {
                visited[id as usize] = true;
                candidates.push(Reverse((d, id)));
                found.push((d, id));
            }
        }
        while found.len() > ef {
            found.pop();
        }
        while let Some(Reverse((d, id))) = candidates.pop() {
            if found.len() >= ef && found.peek().is_some_and(|w| d > w.0) {
                break;
            }
            for &n in &self.links[id as usize][layer] {
                if visited[n as usize] {
                    continue;
                }
                visited[n as usize] = true;
                let dn = self.distance(q, n);
                if found.len() < ef || found.peek().is_some_and(|w| (dn, n) < *w) {
                    candidates.push(Reverse((dn, n)));
                    found.push((dn, n));
                    if found.len() > ef {
                        found.pop();
                    }
                }
            }
        }
        found.into_sorted_vec()
    }

    /// Keeps candidates closer to the base than to any kept neighbor, then tops
    /// up with the nearest discarded ones.
    fn select_neighbors(&self, sorted: &[(Dist, u32)], m: usize) -> Vec<u32> {
        let mut kept: Vec<u32> = Vec::with_capacity(m);
        let mut skipped = Vec::new();
        for &(d, id) in sorted {
            if kept.len() == m {
                break;
            }
            let v = self.vector(id);
            if kept.iter().all(|&k| self.distance(v, k) > d) {
                kept.push(id);
            } else {
                skipped.push(id);
            }
        }
        kept.extend(skipped.into_iter().take(m - kept.len()));
        kept
    }

    pub fn insert(&mut self, vector: &[f64]) -> Result<u32, KnowledgeError> {
        if vector.len() != self.dim {
            return Err(KnowledgeError::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        let id = u32::try_from(self.len()).map_err(|_| KnowledgeError::InvalidConfig("index full".into()))?;
        let level = self.level_for(id as usize);
        self.vectors.extend_from_slice(vector);
        self.links.push(vec![Vec::new(); level + 1]);
        let Some(entry) = self.entry else {
            self.entry = Some(id);
            return Ok(id);
        };
        let top = self.links[entry as usize].len() - 1;
        let mut eps = vec![(self.distance(vector, entry), entry)];
        for layer in (level + 1..=top).rev() {
            eps = self.search_layer(vector, &eps, 1, layer);
        }
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(vector, &eps, self.config.ef_construction, layer);
            let cap = self.config.max_links(layer);
            let neighbors = self.select_neighbors(&found, cap);
            for &n in &neighbors {
                self.links[n as usize][layer].push(id);
                if self.links[n as usize][layer].len() > cap {
                    let base = self.vector(n).to_vec();
                    let mut cands: Vec<(Dist, u32)> = self.links[n as usize][layer]
                        .iter()
                        .map(|&c| (self.distance(&base, c), c))
                        .collect();
                    cands.sort();
                    self.links[n as usize][layer] = self.select_neighbors(&cands, cap);
                }
            }
            self.links[id as usize][layer] = neighbors;
            eps = found;
        }
        if level > top {
            self.entry = Some(id);
        }
        Ok(id)
    }

    /// Up to `k` nearest nodes as (id, cosine similarity), most similar first.
    /// The beam is widened to `k` when `ef` is smaller.
    pub fn search(&self, q: &[f64], k: usize, ef: usize) -> Vec<(u32, f64)> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        let top = self.links[entry as usize].len() - 1;
        let mut eps = vec![(self.distance(q, entry), entry)];
        for layer in (1..=top).rev() {
            eps = self.search_layer(q, &eps, 1, layer);
        }
        self.search_layer(q, &eps, ef.max(k), 0)
            .into_iter()
            .take(k)
            .map(|(d, id)| (id, 1.0 - d.0))
            .collect()
    }
}
