//! Exact top-k cosine search by block scan with a bounded best-k heap, so
//! per-query memory stays O(k) however large the snapshot grows.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicU64, Ordering};

use ordered_float::OrderedFloat;

use crate::database::Snapshot;
use crate::error::{Error, Result};
use crate::features::Embedding;
use crate::index::{dot_f64, norm_f64, RetrievalHit, VectorIndex};

const SCAN_BLOCK: usize = 4096;

/// Brute-force index over a snapshot. For normalized snapshots similarity is
/// a plain dot product against the unit query; raw snapshots use precomputed
/// record norms for the full cosine.
pub struct ExactIndex {
    snapshot: Snapshot,
    record_norms: Option<Vec<f64>>,
    queries: AtomicU64,
}

impl ExactIndex {
    pub fn build(snapshot: Snapshot) -> Self {
        let record_norms = if snapshot.normalized() {
            None
        } else {
            Some((0..snapshot.len()).map(|i| norm_f64(snapshot.vector(i))).collect())
        };
        Self {
            snapshot,
            record_norms,
            queries: AtomicU64::new(0),
        }
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    fn similarity(&self, record: usize, q: &[f32], q_norm: f64) -> f32 {
        let dot = dot_f64(self.snapshot.vector(record), q);
        let denom = match &self.record_norms {
            Some(norms) => norms[record] * q_norm,
            None => q_norm,
        };
        if denom == 0.0 {
            return 0.0;
        }
        (dot / denom) as f32
    }
}

impl VectorIndex for ExactIndex {
    fn query(&self, q: &Embedding, k: usize) -> Result<Vec<RetrievalHit>> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        if k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if q.dim() != self.snapshot.dim() {
            return Err(Error::shape(
                format!("dim {}", self.snapshot.dim()),
                format!("dim {}", q.dim()),
            ));
        }
        if self.snapshot.is_empty() {
            return Ok(Vec::new());
        }
        let q_norm = q.norm();
        if q_norm == 0.0 {
            return Err(Error::DegenerateEmbedding);
        }

        // Min-heap keyed by (similarity, Reverse(index)): the worst kept hit
        // sits on top, and on equal similarity the higher index is evicted
        // first, so lower indices win ties.
        let mut heap: BinaryHeap<Reverse<(OrderedFloat<f32>, Reverse<usize>)>> =
            BinaryHeap::with_capacity(k + 1);
        let n = self.snapshot.len();
        let mut start = 0;
        while start < n {
            let end = (start + SCAN_BLOCK).min(n);
            for i in start..end {
                let sim = self.similarity(i, q.values(), q_norm);
                let key = (OrderedFloat(sim), Reverse(i));
                if heap.len() < k {
                    heap.push(Reverse(key));
                } else if key > heap.peek().unwrap().0 {
                    heap.push(Reverse(key));
                    heap.pop();
                }
            }
            start = end;
        }

        let mut keys: Vec<_> = heap.into_iter().map(|Reverse(key)| key).collect();
        keys.sort_unstable_by(|a, b| b.cmp(a));
        Ok(keys
            .into_iter()
            .map(|(sim, Reverse(idx))| RetrievalHit {
                record_index: idx,
                class_id: self.snapshot.class_id(idx),
                similarity: sim.0,
            })
            .collect())
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
