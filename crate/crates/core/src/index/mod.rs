//! Top-k cosine retrieval over a database snapshot: exact brute force (the
//! default) and HNSW approximate search, plus recall measurement between them.
//!
//! Indexes are immutable once built; any number of threads may query one
//! concurrently. Rebuild after database growth and swap the new index in.

mod exact;
mod hnsw;

pub use exact::ExactIndex;
pub use hnsw::{HnswConfig, HnswIndex, INDEX_CACHE_MAGIC};

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::features::Embedding;

/// One kNN result: position in the snapshot, its class, and the cosine
/// similarity to the query. Result lists are sorted by similarity descending,
/// ties broken by lower record index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalHit {
    pub record_index: usize,
    pub class_id: u32,
    pub similarity: f32,
}

/// Which retrieval backend to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    #[default]
    Exact,
    Hnsw,
}

impl std::str::FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(IndexKind::Exact),
            "hnsw" => Ok(IndexKind::Hnsw),
            other => Err(Error::InvalidConfig(format!(
                "unknown index kind {other:?} (expected exact|hnsw)"
            ))),
        }
    }
}

/// Common query surface for the exact and HNSW indexes.
///
/// `queries_issued` counts every search actually executed; the fusion layer's
/// confidence skip is verified against it.
pub trait VectorIndex: Send + Sync {
    fn query(&self, q: &Embedding, k: usize) -> Result<Vec<RetrievalHit>>;
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn queries_issued(&self) -> u64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fraction of exact hits the approximate result recovered:
/// `|approx ∩ exact| / k` over record indices. Both lists must have the same
/// length.
pub fn recall_at_k(approx: &[RetrievalHit], exact: &[RetrievalHit]) -> Result<f64> {
    if approx.len() != exact.len() {
        return Err(Error::InvalidComparison(format!(
            "hit lists differ in length: {} vs {}",
            approx.len(),
            exact.len()
        )));
    }
    if approx.is_empty() {
        return Ok(1.0);
    }
    let exact_set: HashSet<usize> = exact.iter().map(|h| h.record_index).collect();
    let shared = approx
        .iter()
        .filter(|h| exact_set.contains(&h.record_index))
        .count();
    Ok(shared as f64 / approx.len() as f64)
}

/// Two-pass cosine: `a·b / (‖a‖‖b‖)`, accumulated in f64. This is the debug
/// reference the dot-product fast path is tested against; it returns 0 when
/// either vector has zero norm.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f32 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    let denom = na.sqrt() * nb.sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (dot / denom) as f32
}

pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn norm_f64(a: &[f32]) -> f64 {
    a.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}
