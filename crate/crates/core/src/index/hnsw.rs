//! Hierarchical navigable small-world graph for approximate top-k cosine
//! search.
//!
//! Construction is single-writer and fully reproducible: node levels come from
//! a seeded ChaCha stream in insertion order, and every traversal breaks ties
//! on node id. Layer 0 allows up to `2·M` links per node, upper layers `M`.
//! Neighbor selection uses the spread heuristic (a candidate is kept only if
//! it is closer to the query than to every neighbor already kept), with
//! pruned candidates backfilling any remaining slots — this keeps clusters
//! mutually reachable.
//!
//! The graph can be cached to disk ("KNHX" format); a cache is stale, not an
//! error, when the snapshot has grown since it was written.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use ordered_float::OrderedFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::database::Snapshot;
use crate::error::{CorruptKind, Error, Result};
use crate::features::Embedding;
use crate::index::{dot_f64, norm_f64, RetrievalHit, VectorIndex};
use crate::io_util::{CrcWriter, Cursor};

pub const INDEX_CACHE_MAGIC: &[u8; 4] = b"KNHX";
const INDEX_CACHE_VERSION: u32 = 1;

/// HNSW build/search parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HnswConfig {
    /// Max links per node on layers above 0 (layer 0 allows 2·M).
    pub m: usize,
    /// Beam width while building.
    pub ef_construction: usize,
    /// Default beam width while searching.
    pub ef_search: usize,
    /// Seed for level assignment.
    pub seed: u64,
}

impl Default for HnswConfig {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 100,
            ef_search: 64,
            seed: 0,
        }
    }
}

impl HnswConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!("hnsw m must be >= 2, got {}", self.m)));
        }
        if self.ef_construction < self.m {
            return Err(Error::InvalidConfig(format!(
                "ef_construction ({}) must be >= m ({})",
                self.ef_construction, self.m
            )));
        }
        if self.ef_search == 0 {
            return Err(Error::InvalidConfig("ef_search must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Node {
    levels: Vec<Vec<u32>>,
}

impl Node {
    fn new(level: usize) -> Self {
        Self {
            levels: vec![Vec::new(); level + 1],
        }
    }

    fn top_level(&self) -> usize {
        self.levels.len() - 1
    }
}

pub struct HnswIndex {
    snapshot: Snapshot,
    config: HnswConfig,
    nodes: Vec<Node>,
    entry: Option<u32>,
    max_level: usize,
    record_norms: Option<Vec<f64>>,
    queries: AtomicU64,
}

impl HnswIndex {
    pub fn build(snapshot: Snapshot, config: HnswConfig) -> Result<Self> {
        config.validate()?;
        let record_norms = if snapshot.normalized() {
            None
        } else {
            Some((0..snapshot.len()).map(|i| norm_f64(snapshot.vector(i))).collect())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let ml = 1.0 / (config.m as f64).ln();
        let n = snapshot.len();
        let mut index = Self {
            snapshot,
            config,
            nodes: Vec::with_capacity(n),
            entry: None,
            max_level: 0,
            record_norms,
            queries: AtomicU64::new(0),
        };
        for i in 0..n {
            let u: f64 = rng.random();
            let level = (-(1.0 - u).ln() * ml).floor() as usize;
            index.insert_node(i as u32, level);
        }
        Ok(index)
    }

    pub fn config(&self) -> &HnswConfig {
        &self.config
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    /// Search with an explicit beam width instead of the configured
    /// `ef_search`.
    pub fn query_with_ef(&self, q: &Embedding, k: usize, ef_search: usize) -> Result<Vec<RetrievalHit>> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.search(q, k, ef_search.max(1))
    }

    fn record_norm(&self, i: usize) -> f64 {
        match &self.record_norms {
            Some(norms) => norms[i],
            None => 1.0,
        }
    }

    /// Cosine between an external query and record `i`.
    fn sim_to_query(&self, q: &[f32], q_norm: f64, i: usize) -> f64 {
        let denom = q_norm * self.record_norm(i);
        if denom == 0.0 {
            return 0.0;
        }
        dot_f64(q, self.snapshot.vector(i)) / denom
    }

    /// Cosine between two stored records.
    fn sim_between(&self, a: usize, b: usize) -> f64 {
        let denom = self.record_norm(a) * self.record_norm(b);
        if denom == 0.0 {
            return 0.0;
        }
        dot_f64(self.snapshot.vector(a), self.snapshot.vector(b)) / denom
    }

    fn insert_node(&mut self, id: u32, level: usize) {
        self.nodes.push(Node::new(level));
        let Some(mut curr) = self.entry else {
            self.entry = Some(id);
            self.max_level = level;
            return;
        };

        let q = self.snapshot.vector(id as usize).to_vec();
        let q_norm = self.record_norm(id as usize);

        for l in (level + 1..=self.max_level).rev() {
            curr = self.greedy_closest(&q, q_norm, curr, l);
        }

        for l in (0..=level.min(self.max_level)).rev() {
            let candidates = self.search_layer(&q, q_norm, curr, self.config.ef_construction, l);
            let selected = self.select_neighbors(&candidates, self.config.m);
            let max_conn = if l == 0 { 2 * self.config.m } else { self.config.m };

            self.nodes[id as usize].levels[l] = selected.clone();
            for &nb in &selected {
                self.nodes[nb as usize].levels[l].push(id);
                if self.nodes[nb as usize].levels[l].len() > max_conn {
                    self.prune_neighbors(nb, l, max_conn);
                }
            }
            if let Some(&(_, best)) = candidates.first() {
                curr = best;
            }
        }

        if level > self.max_level {
            self.entry = Some(id);
            self.max_level = level;
        }
    }

    /// Spread-heuristic neighbor selection with backfill from the pruned pool.
    fn select_neighbors(&self, candidates: &[(f64, u32)], m: usize) -> Vec<u32> {
        if candidates.len() <= m {
            return candidates.iter().map(|&(_, id)| id).collect();
        }
        let mut selected: Vec<u32> = Vec::with_capacity(m);
        let mut pruned: Vec<u32> = Vec::new();
        for &(sim_to_q, cand) in candidates {
            if selected.len() >= m {
                break;
            }
            let dominated = selected
                .iter()
                .any(|&s| self.sim_between(cand as usize, s as usize) > sim_to_q);
            if dominated {
                pruned.push(cand);
            } else {
                selected.push(cand);
            }
        }
        for cand in pruned {
            if selected.len() >= m {
                break;
            }
            selected.push(cand);
        }
        selected
    }

    fn prune_neighbors(&mut self, node: u32, level: usize, max_conn: usize) {
        let neighbors = self.nodes[node as usize].levels[level].clone();
        let mut candidates: Vec<(f64, u32)> = neighbors
            .into_iter()
            .map(|nb| (self.sim_between(node as usize, nb as usize), nb))
            .collect();
        candidates.sort_unstable_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1))
        });
        let kept = self.select_neighbors(&candidates, max_conn);
        self.nodes[node as usize].levels[level] = kept;
    }

    fn greedy_closest(&self, q: &[f32], q_norm: f64, start: u32, level: usize) -> u32 {
        let mut curr = start;
        let mut best = self.sim_to_query(q, q_norm, curr as usize);
        loop {
            let mut improved = false;
            for &nb in &self.nodes[curr as usize].levels[level] {
                let sim = self.sim_to_query(q, q_norm, nb as usize);
                if sim > best {
                    best = sim;
                    curr = nb;
                    improved = true;
                }
            }
            if !improved {
                return curr;
            }
        }
    }

    /// Beam search on one layer. Returns up to `ef` nodes sorted by
    /// (similarity desc, id asc).
    fn search_layer(&self, q: &[f32], q_norm: f64, entry: u32, ef: usize, level: usize) -> Vec<(f64, u32)> {
        let mut visited = VisitedSet::new(self.nodes.len());
        visited.mark(entry);

        let entry_sim = self.sim_to_query(q, q_norm, entry as usize);
        // Max-heap of nodes still to expand; min-heap of the best `ef` found.
        let mut frontier: BinaryHeap<(OrderedFloat<f64>, Reverse<u32>)> = BinaryHeap::new();
        let mut best: BinaryHeap<Reverse<(OrderedFloat<f64>, Reverse<u32>)>> = BinaryHeap::new();
        frontier.push((OrderedFloat(entry_sim), Reverse(entry)));
        best.push(Reverse((OrderedFloat(entry_sim), Reverse(entry))));

        while let Some((OrderedFloat(sim), Reverse(node))) = frontier.pop() {
            let worst = best.peek().map(|Reverse((s, _))| s.0).unwrap();
            if best.len() >= ef && sim < worst {
                break;
            }
            for &nb in &self.nodes[node as usize].levels[level] {
                if visited.mark(nb) {
                    continue;
                }
                let nb_sim = self.sim_to_query(q, q_norm, nb as usize);
                let worst = best.peek().map(|Reverse((s, _))| s.0).unwrap();
                if best.len() < ef || nb_sim > worst {
                    frontier.push((OrderedFloat(nb_sim), Reverse(nb)));
                    best.push(Reverse((OrderedFloat(nb_sim), Reverse(nb))));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }

        let mut out: Vec<(f64, u32)> = best
            .into_iter()
            .map(|Reverse((s, Reverse(id)))| (s.0, id))
            .collect();
        out.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        out
    }

    fn search(&self, q: &Embedding, k: usize, ef_search: usize) -> Result<Vec<RetrievalHit>> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if q.dim() != self.snapshot.dim() {
            return Err(Error::shape(
                format!("dim {}", self.snapshot.dim()),
                format!("dim {}", q.dim()),
            ));
        }
        let Some(entry) = self.entry else {
            return Ok(Vec::new());
        };
        let q_norm = q.norm();
        if q_norm == 0.0 {
            return Err(Error::DegenerateEmbedding);
        }

        // With k covering the whole snapshot the approximation adds nothing;
        // scan exhaustively so all records are always returned.
        if k >= self.snapshot.len() {
            let mut all: Vec<(f64, u32)> = (0..self.snapshot.len())
                .map(|i| (self.sim_to_query(q.values(), q_norm, i), i as u32))
                .collect();
            all.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            return Ok(self.to_hits(all, k));
        }

        let mut curr = entry;
        for l in (1..=self.max_level).rev() {
            curr = self.greedy_closest(q.values(), q_norm, curr, l);
        }
        let found = self.search_layer(q.values(), q_norm, curr, ef_search.max(k), 0);
        Ok(self.to_hits(found, k))
    }

    fn to_hits(&self, scored: Vec<(f64, u32)>, k: usize) -> Vec<RetrievalHit> {
        scored
            .into_iter()
            .take(k)
            .map(|(sim, id)| RetrievalHit {
                record_index: id as usize,
                class_id: self.snapshot.class_id(id as usize),
                similarity: sim as f32,
            })
            .collect()
    }

    /// Serialize the graph (not the vectors) to the "KNHX" cache format.
    pub fn save_cache<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = CrcWriter::new(sink);
        w.write_all(INDEX_CACHE_MAGIC)?;
        w.write_all(&INDEX_CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.config.m as u32).to_le_bytes())?;
        w.write_all(&(self.config.ef_construction as u32).to_le_bytes())?;
        w.write_all(&(self.config.ef_search as u32).to_le_bytes())?;
        w.write_all(&self.config.seed.to_le_bytes())?;
        w.write_all(&(self.snapshot.len() as u64).to_le_bytes())?;
        w.write_all(&(self.snapshot.dim() as u32).to_le_bytes())?;
        w.write_all(&[self.snapshot.normalized() as u8])?;
        w.write_all(&self.entry.map_or(u64::MAX, u64::from).to_le_bytes())?;
        w.write_all(&(self.max_level as u32).to_le_bytes())?;
        for node in &self.nodes {
            w.write_all(&(node.levels.len() as u32).to_le_bytes())?;
            for level in &node.levels {
                w.write_all(&(level.len() as u32).to_le_bytes())?;
                for &nb in level {
                    w.write_all(&nb.to_le_bytes())?;
                }
            }
        }
        let crc = w.crc();
        let mut sink = w.into_inner();
        sink.write_all(&crc.to_le_bytes())?;
        sink.flush()?;
        Ok(())
    }

    /// Load a cached graph for `snapshot`. Returns `Ok(None)` when the cache
    /// was written for a different record count or dim (stale; rebuild).
    pub fn load_cache<R: Read>(mut source: R, snapshot: Snapshot) -> Result<Option<Self>> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::cache_from_bytes(&bytes, snapshot)
    }

    pub fn cache_from_bytes(bytes: &[u8], snapshot: Snapshot) -> Result<Option<Self>> {
        let mut cur = Cursor::new(bytes, Error::CorruptIndexCache);
        let magic = cur.take(4)?;
        if magic != INDEX_CACHE_MAGIC {
            return Err(cur.corrupt(CorruptKind::BadMagic));
        }
        let version = cur.u32()?;
        if version != INDEX_CACHE_VERSION {
            return Err(cur.corrupt(CorruptKind::Version {
                found: version,
                supported: INDEX_CACHE_VERSION,
            }));
        }
        let config = HnswConfig {
            m: cur.u32()? as usize,
            ef_construction: cur.u32()? as usize,
            ef_search: cur.u32()? as usize,
            seed: cur.u64()?,
        };
        config
            .validate()
            .map_err(|e| cur.corrupt(CorruptKind::Encoding(e.to_string())))?;
        let record_count = cur.u64()? as usize;
        let dim = cur.u32()? as usize;
        let normalized = cur.u8()? != 0;
        let entry_raw = cur.u64()?;
        let max_level = cur.u32()? as usize;

        let stale = record_count != snapshot.len()
            || dim != snapshot.dim()
            || normalized != snapshot.normalized();

        let mut nodes = Vec::with_capacity(record_count.min(1 << 20));
        for _ in 0..record_count {
            let level_count = cur.u32()? as usize;
            if level_count == 0 {
                return Err(cur.corrupt(CorruptKind::Encoding("node with zero levels".into())));
            }
            let mut levels = Vec::with_capacity(level_count);
            for _ in 0..level_count {
                let cnt = cur.u32()? as usize;
                let mut ids = Vec::with_capacity(cnt);
                for _ in 0..cnt {
                    let id = cur.u32()?;
                    if id as usize >= record_count {
                        return Err(cur.corrupt(CorruptKind::Encoding(format!(
                            "neighbor id {id} out of range"
                        ))));
                    }
                    ids.push(id);
                }
                levels.push(ids);
            }
            nodes.push(Node { levels });
        }

        let body_end = cur.pos();
        let stored_crc = cur.u32()?;
        if cur.remaining() != 0 {
            return Err(cur.corrupt(CorruptKind::Encoding("trailing bytes after checksum".into())));
        }
        if stored_crc != crc32fast::hash(&bytes[..body_end]) {
            return Err(cur.corrupt(CorruptKind::Checksum));
        }

        if stale {
            return Ok(None);
        }

        let entry = if entry_raw == u64::MAX {
            None
        } else if (entry_raw as usize) < record_count {
            Some(entry_raw as u32)
        } else {
            return Err(Error::CorruptIndexCache(CorruptKind::Encoding(format!(
                "entry point {entry_raw} out of range"
            ))));
        };
        if let Some(e) = entry {
            if nodes[e as usize].top_level() != max_level {
                return Err(Error::CorruptIndexCache(CorruptKind::Encoding(
                    "entry point level disagrees with max level".into(),
                )));
            }
        }

        let record_norms = if snapshot.normalized() {
            None
        } else {
            Some((0..snapshot.len()).map(|i| norm_f64(snapshot.vector(i))).collect())
        };
        Ok(Some(Self {
            snapshot,
            config,
            nodes,
            entry,
            max_level,
            record_norms,
            queries: AtomicU64::new(0),
        }))
    }
}

impl VectorIndex for HnswIndex {
    fn query(&self, q: &Embedding, k: usize) -> Result<Vec<RetrievalHit>> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.search(q, k, self.config.ef_search)
    }

    fn len(&self) -> usize {
        self.snapshot.len()
    }

    fn dim(&self) -> usize {
        self.snapshot.dim()
    }

    fn queries_issued(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }
}

/// Bitset used as the visited marker during traversal.
struct VisitedSet {
    words: Vec<u64>,
}

impl VisitedSet {
    fn new(n: usize) -> Self {
        Self {
            words: vec![0; n.div_ceil(64)],
        }
    }

    /// Marks the id; returns true if it was already marked.
    fn mark(&mut self, id: u32) -> bool {
        let word = (id / 64) as usize;
        let bit = 1u64 << (id % 64);
        let seen = self.words[word] & bit != 0;
        self.words[word] |= bit;
        seen
    }
}
