//! Retrieval-to-probability conversion and confidence-gated fusion.
//!
//! Retrieved neighbors vote for their classes with their cosine similarities;
//! the accumulated per-class scores go through a softmax to become the
//! retrieval distribution. Fusion is a whole-vector switch: when the base
//! model's top probability clears the gate (strict `>`), the base vector
//! passes through verbatim and no retrieval is issued at all; otherwise the
//! result is the retrieval distribution scaled by λ, deliberately left
//! unnormalized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Embedding;
use crate::index::{RetrievalHit, VectorIndex};

/// Fusion hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Neighbors retrieved per non-confident query.
    pub k: usize,
    /// Weight applied to the retrieval distribution.
    pub lambda: f32,
    /// Confidence gate on `max(p_base)`.
    pub threshold: f32,
    /// Additive shift inside the softmax. Shift-invariance makes it inert;
    /// kept for formula fidelity.
    pub epsilon: f32,
    /// Renormalize the retrieval branch output to sum to 1. Off by default:
    /// the fused vector is emitted raw.
    pub renormalize: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            k: 16,
            lambda: 1.2,
            threshold: 0.7,
            epsilon: 0.0,
            renormalize: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig(format!(
                "threshold must be in [0, 1], got {}",
                self.threshold
            )));
        }
        if !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig("epsilon must be finite".into()));
        }
        Ok(())
    }
}

/// A length-C vector of nonnegative class scores. `normalized` records
/// whether it sums to 1 (the λ-scaled retrieval branch does not).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    values: Vec<f32>,
    normalized: bool,
}

impl ProbabilityVector {
    pub fn new(values: Vec<f32>, normalized: bool) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig(
                "probability vector must have at least one class".into(),
            ));
        }
        let mut sum = 0.0f64;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidData(format!(
                    "probability {v} at class {i} is invalid"
                )));
            }
            sum += v as f64;
        }
        if normalized && (sum - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidData(format!(
                "vector flagged normalized but sums to {sum}"
            )));
        }
        Ok(Self { values, normalized })
    }

    /// Uniform distribution over `class_count` classes.
    pub fn uniform(class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::InvalidConfig("class count must be >= 1".into()));
        }
        Self::new(vec![1.0 / class_count as f32; class_count], true)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Index of the largest entry; first index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Componentwise scale. The result is only flagged normalized for λ = 1.
    pub fn scaled(&self, lambda: f32) -> ProbabilityVector {
        ProbabilityVector {
            values: self.values.iter().map(|&v| lambda * v).collect(),
            normalized: self.normalized && lambda == 1.0,
        }
    }

    pub fn renormalized(&self) -> Result<ProbabilityVector> {
        let sum: f64 = self.values.iter().map(|&v| v as f64).sum();
        if sum <= 0.0 {
            return Err(Error::InvalidData(
                "cannot renormalize an all-zero vector".into(),
            ));
        }
        ProbabilityVector::new(
            self.values.iter().map(|&v| (v as f64 / sum) as f32).collect(),
            true,
        )
    }
}

/// Accumulate neighbor similarities per class and softmax the result.
///
/// `logit_j = Σ_i s_i · 1(c_i = j) + ε`; the output is the softmax of the
/// logits, computed in f64. No hits at all yields the uniform distribution.
pub fn pseudo_logits(
    hits: &[RetrievalHit],
    class_count: usize,
    epsilon: f32,
) -> Result<ProbabilityVector> {
    if class_count == 0 {
        return Err(Error::InvalidConfig("class count must be >= 1".into()));
    }
    if hits.is_empty() {
        return ProbabilityVector::uniform(class_count);
    }
    let mut logits = vec![epsilon as f64; class_count];
    for hit in hits {
        if hit.class_id as usize >= class_count {
            return Err(Error::UnknownClass(hit.class_id));
        }
        logits[hit.class_id as usize] += hit.similarity as f64;
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    ProbabilityVector::new(exps.iter().map(|&e| (e / denom) as f32).collect(), true)
}

/// Whole-vector confidence gate: `p_base` verbatim when its maximum clears
/// the threshold (strict `>`), otherwise `λ · p_ret` — never a blend, and the
/// retrieval branch is not renormalized.
pub fn fuse(
    p_ret: &ProbabilityVector,
    p_base: &ProbabilityVector,
    lambda: f32,
    threshold: f32,
) -> Result<ProbabilityVector> {
    if p_ret.len() != p_base.len() {
        return Err(Error::shape(
            format!("{} classes", p_base.len()),
            format!("{} classes", p_ret.len()),
        ));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!(
            "threshold must be in [0, 1], got {threshold}"
        )));
    }
    if p_base.max() > threshold {
        Ok(p_base.clone())
    } else {
        Ok(p_ret.scaled(lambda))
    }
}

/// Outcome of classifying one query.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDecision {
    pub class_id: u32,
    pub p_final: ProbabilityVector,
    /// False on the confident path (no search issued at all).
    pub used_retrieval: bool,
    /// True when retrieval was wanted but the database was empty.
    pub fallback: bool,
}

/// Classify one query against the index under the confidence gate.
///
/// A confident base prediction short-circuits: the index is never queried.
/// A non-confident prediction retrieves `k` neighbors, builds pseudo-logits,
/// and fuses. An empty database falls back to the base prediction with the
/// fallback flag set.
pub fn classify_query(
    q: &Embedding,
    p_base: &ProbabilityVector,
    index: &dyn VectorIndex,
    cfg: &FusionConfig,
    class_count: usize,
) -> Result<ClassDecision> {
    cfg.validate()?;
    if p_base.len() != class_count {
        return Err(Error::shape(
            format!("{class_count} classes"),
            format!("{} classes", p_base.len()),
        ));
    }

    if p_base.max() > cfg.threshold {
        return Ok(ClassDecision {
            class_id: p_base.argmax() as u32,
            p_final: p_base.clone(),
            used_retrieval: false,
            fallback: false,
        });
    }
    if index.is_empty() {
        return Ok(ClassDecision {
            class_id: p_base.argmax() as u32,
            p_final: p_base.clone(),
            used_retrieval: false,
            fallback: true,
        });
    }

    let hits = index.query(q, cfg.k)?;
    let p_ret = pseudo_logits(&hits, class_count, cfg.epsilon)?;
    let mut p_final = fuse(&p_ret, p_base, cfg.lambda, cfg.threshold)?;
    if cfg.renormalize {
        p_final = p_final.renormalized()?;
    }
    Ok(ClassDecision {
        class_id: p_final.argmax() as u32,
        p_final,
        used_retrieval: true,
        fallback: false,
    })
}

/// Elementwise [`classify_query`] over a batch. Queries are independent, so
/// they run in parallel; output order matches input order and the first
/// element error (by index) wins.
pub fn batch_classify(
    queries: &[(Embedding, ProbabilityVector)],
    index: &dyn VectorIndex,
    cfg: &FusionConfig,
    class_count: usize,
) -> Result<Vec<ClassDecision>> {
    let results: Vec<Result<ClassDecision>> = queries
        .par_iter()
        .map(|(q, p_base)| classify_query(q, p_base, index, cfg, class_count))
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        out.push(r.map_err(|e| Error::at(i, e))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::database::{EmbeddingDatabase, EmbeddingRecord};
    use crate::index::ExactIndex;

    fn hit(class_id: u32, similarity: f32) -> RetrievalHit {
        RetrievalHit {
            record_index: 0,
            class_id,
            similarity,
        }
    }

    #[test]
    fn single_hit_two_classes() {
        let p = pseudo_logits(&[hit(0, 1.0)], 2, 0.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p.values()[0] as f64 - e / (e + 1.0)).abs() < 1e-6);
        assert!((p.values()[1] as f64 - 1.0 / (e + 1.0)).abs() < 1e-6);
    }

    #[test]
    fn epsilon_is_inert() {
        let hits = [hit(0, 0.9), hit(1, 0.8), hit(0, 0.7)];
        let base = pseudo_logits(&hits, 3, 0.0).unwrap();
        for eps in [1.0f32, 5.0, -3.0] {
            let shifted = pseudo_logits(&hits, 3, eps).unwrap();
            for (a, b) in base.values().iter().zip(shifted.values()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn three_hit_accumulation_matches_oracle() {
        let hits = [hit(0, 0.9), hit(1, 0.8), hit(0, 0.7)];
        let p = pseudo_logits(&hits, 3, 0.0).unwrap();
        // Direct f64 softmax of [1.6, 0.8, 0.0].
        let logits = [1.6f64, 0.8, 0.0];
        let denom: f64 = logits.iter().map(|l| l.exp()).sum();
        for (got, l) in p.values().iter().zip(logits) {
            assert!((*got as f64 - l.exp() / denom).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_hits_give_uniform() {
        let p = pseudo_logits(&[], 4, 0.0).unwrap();
        for &v in p.values() {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_class_rejected() {
        assert!(matches!(
            pseudo_logits(&[hit(5, 0.5)], 3, 0.0),
            Err(Error::UnknownClass(5))
        ));
    }

    #[test]
    fn fuse_confident_passes_base_verbatim() {
        let p_base = ProbabilityVector::new(vec![0.9, 0.1], true).unwrap();
        let p_ret = ProbabilityVector::new(vec![0.5, 0.5], true).unwrap();
        let out = fuse(&p_ret, &p_base, 1.2, 0.7).unwrap();
        assert_eq!(out.values(), p_base.values());
        assert!(out.normalized());
    }

    #[test]
    fn fuse_nonconfident_scales_retrieval() {
        let p_base = ProbabilityVector::new(vec![0.5, 0.5], true).unwrap();
        let p_ret = ProbabilityVector::new(vec![0.6, 0.4], true).unwrap();
        let out = fuse(&p_ret, &p_base, 1.2, 0.7).unwrap();
        assert_eq!(out.values(), &[1.2f32 * 0.6, 1.2 * 0.4]);
        assert!(!out.normalized());
    }

    #[test]
    fn fuse_boundary_routes_to_retrieval() {
        // max(p_base) == T must take the retrieval branch (strict >).
        let p_base = ProbabilityVector::new(vec![0.7, 0.3], true).unwrap();
        let p_ret = ProbabilityVector::new(vec![0.2, 0.8], true).unwrap();
        let out = fuse(&p_ret, &p_base, 1.0, 0.7).unwrap();
        assert_eq!(out.values(), p_ret.values());
    }

    #[test]
    fn fuse_length_mismatch() {
        let a = ProbabilityVector::new(vec![1.0], true).unwrap();
        let b = ProbabilityVector::new(vec![0.5, 0.5], true).unwrap();
        assert!(matches!(fuse(&a, &b, 1.0, 0.5), Err(Error::ShapeMismatch { .. })));
    }

    fn toy_index(duplicates: usize) -> (EmbeddingDatabase, Embedding) {
        // Class 0 holds `duplicates` copies of the target vector; class 1
        // holds an orthogonal distractor.
        let mut db = EmbeddingDatabase::create(4).unwrap();
        db.register_class("target").unwrap();
        db.register_class("other").unwrap();
        let target = Embedding::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        for i in 0..duplicates {
            db.insert(EmbeddingRecord::new(target.clone(), 0, i as u64)).unwrap();
        }
        db.insert(EmbeddingRecord::new(
            Embedding::new(vec![0.0, 1.0, 0.0, 0.0]).unwrap(),
            1,
            99,
        ))
        .unwrap();
        (db, target)
    }

    #[test]
    fn confident_query_skips_the_index() {
        let (db, target) = toy_index(4);
        let index = ExactIndex::build(db.snapshot());
        let p_base = ProbabilityVector::new(vec![0.95, 0.05], true).unwrap();
        let d = classify_query(&target, &p_base, &index, &FusionConfig::default(), 2).unwrap();
        assert_eq!(d.class_id, 0);
        assert!(!d.used_retrieval);
        assert_eq!(index.queries_issued(), 0);
        assert_eq!(d.p_final.values(), p_base.values());
    }

    #[test]
    fn nonconfident_query_matches_manual_composition() {
        let (db, target) = toy_index(4);
        let index = ExactIndex::build(db.snapshot());
        let cfg = FusionConfig { k: 3, ..Default::default() };
        let p_base = ProbabilityVector::new(vec![0.5, 0.5], true).unwrap();

        let d = classify_query(&target, &p_base, &index, &cfg, 2).unwrap();
        assert!(d.used_retrieval);

        let hits = index.query(&target, cfg.k).unwrap();
        let manual = fuse(
            &pseudo_logits(&hits, 2, cfg.epsilon).unwrap(),
            &p_base,
            cfg.lambda,
            cfg.threshold,
        )
        .unwrap();
        assert_eq!(d.p_final.values(), manual.values());
        assert_eq!(d.class_id as usize, manual.argmax());
    }

    #[test]
    fn stored_duplicates_dominate_uniform_base() {
        // Query equals a stored class-0 vector; with k=16 and >= k/2 stored
        // duplicates the self-similarity votes dominate.
        let (db, target) = toy_index(10);
        let index = ExactIndex::build(db.snapshot());
        let cfg = FusionConfig::default();
        let p_base = ProbabilityVector::uniform(2).unwrap(); // max 0.5 <= 0.7
        let d = classify_query(&target, &p_base, &index, &cfg, 2).unwrap();
        assert!(d.used_retrieval);
        assert_eq!(d.class_id, 0);
    }

    #[test]
    fn empty_database_falls_back_to_base() {
        let db = EmbeddingDatabase::create(4).unwrap();
        let index = ExactIndex::build(db.snapshot());
        let q = Embedding::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let p_base = ProbabilityVector::new(vec![0.4, 0.6], true).unwrap();
        let d = classify_query(&q, &p_base, &index, &FusionConfig::default(), 2).unwrap();
        assert!(!d.used_retrieval);
        assert!(d.fallback);
        assert_eq!(d.class_id, 1);
        assert_eq!(index.queries_issued(), 0);
    }

    #[test]
    fn batch_matches_sequential_and_preserves_order() {
        let (db, target) = toy_index(4);
        let index = ExactIndex::build(db.snapshot());
        let cfg = FusionConfig::default();
        let confident = ProbabilityVector::new(vec![0.9, 0.1], true).unwrap();
        let unsure = ProbabilityVector::uniform(2).unwrap();

        let queries = vec![
            (target.clone(), confident.clone()),
            (target.clone(), unsure.clone()),
        ];
        let batch = batch_classify(&queries, &index, &cfg, 2).unwrap();
        assert_eq!(batch.len(), 2);
        assert!(!batch[0].used_retrieval);
        assert!(batch[1].used_retrieval);

        let seq: Vec<_> = queries
            .iter()
            .map(|(q, p)| classify_query(q, p, &index, &cfg, 2).unwrap())
            .collect();
        assert_eq!(batch, seq);

        assert!(batch_classify(&[], &index, &cfg, 2).unwrap().is_empty());
    }

    #[test]
    fn batch_errors_carry_element_index() {
        let (db, target) = toy_index(2);
        let index = ExactIndex::build(db.snapshot());
        let cfg = FusionConfig::default();
        let good = ProbabilityVector::uniform(2).unwrap();
        let bad = ProbabilityVector::uniform(3).unwrap(); // wrong length
        let queries = vec![(target.clone(), good), (target, bad)];
        let err = batch_classify(&queries, &index, &cfg, 2).unwrap_err();
        assert!(matches!(err, Error::AtIndex { index: 1, .. }));
    }

    #[test]
    fn lambda_never_changes_argmax() {
        let p = ProbabilityVector::new(vec![0.2, 0.5, 0.3], true).unwrap();
        for lambda in [0.1f32, 1.0, 1.2, 7.5] {
            assert_eq!(p.scaled(lambda).argmax(), p.argmax());
        }
    }
}
