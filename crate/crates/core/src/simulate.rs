//! Class-incremental vocabulary expansion harness, training-free: at each
//! timestep the new classes' embeddings are inserted into the database, the
//! index is rebuilt, and accuracy is measured over every class seen so far
//! with fresh held-out queries — split into base-class and new-class accuracy
//! so forgetting (there should be none) is directly visible.

use std::time::Instant;

use serde::Serialize;

use crate::database::{EmbeddingDatabase, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::fusion::{batch_classify, FusionConfig, ProbabilityVector};
use crate::index::{ExactIndex, HnswConfig, HnswIndex, IndexKind, VectorIndex};
use crate::synthetic::{gen_synthetic, SyntheticSpec};

/// Metrics after one timestep. `new_acc` is absent at timestep 0, before any
/// incremental class exists. `query_latency_s` is wall-clock and therefore
/// the one column not reproducible across runs.
#[derive(Debug, Clone, Serialize)]
pub struct TimestepMetrics {
    pub timestep: usize,
    pub classes_so_far: usize,
    pub base_acc: f64,
    pub new_acc: Option<f64>,
    pub overall_acc: f64,
    pub db_size: usize,
    pub query_latency_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub queries_per_class: usize,
    pub timesteps: Vec<TimestepMetrics>,
}

/// One splitmix64 round; derives per-timestep query seeds from the run seed.
fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run the expansion schedule in `spec` and score every timestep.
///
/// Queries use a uniform base distribution, which never clears the confidence
/// gate once more than `1/threshold` classes exist, so every prediction goes
/// through retrieval — the mechanism under test.
pub fn run_continual_simulation(
    spec: &SyntheticSpec,
    fusion: &FusionConfig,
    index_kind: IndexKind,
    hnsw: &HnswConfig,
    queries_per_class: usize,
    seed: u64,
) -> Result<SimulationReport> {
    spec.validate()?;
    fusion.validate()?;
    if queries_per_class == 0 {
        return Err(Error::InvalidConfig("queries_per_class must be >= 1".into()));
    }

    let dataset = gen_synthetic(spec, seed)?;
    let base_classes = spec.schedule[0];

    let mut db = EmbeddingDatabase::create(spec.dim)?;
    let mut introduced = 0usize;
    let mut timesteps = Vec::with_capacity(spec.schedule.len());

    for (t, &increment) in spec.schedule.iter().enumerate() {
        for class in introduced..introduced + increment {
            let id = db.register_class(&format!("class_{class:04}"))?;
            let records: Vec<EmbeddingRecord> = dataset
                .class_samples(class)
                .iter()
                .map(|e| EmbeddingRecord::new(e.clone(), id, class as u64))
                .collect();
            db.insert_batch(records)?;
        }
        introduced += increment;

        let snapshot = db.snapshot();
        let index: Box<dyn VectorIndex> = match index_kind {
            IndexKind::Exact => Box::new(ExactIndex::build(snapshot)),
            IndexKind::Hnsw => Box::new(HnswIndex::build(snapshot, hnsw.clone())?),
        };

        let class_count = db.registry().len();
        let (queries, labels) = dataset.draw_queries(introduced, queries_per_class, mix_seed(seed, t as u64));
        let p_base = ProbabilityVector::uniform(class_count)?;
        let batch: Vec<_> = queries
            .into_iter()
            .map(|q| (q, p_base.clone()))
            .collect();

        let started = Instant::now();
        let decisions = batch_classify(&batch, index.as_ref(), fusion, class_count)?;
        let elapsed = started.elapsed().as_secs_f64();

        let mut base_correct = 0usize;
        let mut base_total = 0usize;
        let mut new_correct = 0usize;
        let mut new_total = 0usize;
        for (decision, &label) in decisions.iter().zip(&labels) {
            let correct = decision.class_id == label;
            if (label as usize) < base_classes {
                base_total += 1;
                base_correct += correct as usize;
            } else {
                new_total += 1;
                new_correct += correct as usize;
            }
        }

        timesteps.push(TimestepMetrics {
            timestep: t,
            classes_so_far: introduced,
            base_acc: base_correct as f64 / base_total as f64,
            new_acc: (new_total > 0).then(|| new_correct as f64 / new_total as f64),
            overall_acc: (base_correct + new_correct) as f64 / (base_total + new_total) as f64,
            db_size: db.len(),
            query_latency_s: elapsed / labels.len() as f64,
        });
    }

    Ok(SimulationReport {
        seed,
        queries_per_class,
        timesteps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tight_spec() -> SyntheticSpec {
        let sigma = 0.05;
        SyntheticSpec {
            class_count: 12,
            per_class: 20,
            dim: 32,
            separation: 10.0 * sigma,
            sigma,
            schedule: vec![8, 2, 2],
        }
    }

    #[test]
    fn well_separated_clusters_stay_accurate() {
        let report = run_continual_simulation(
            &tight_spec(),
            &FusionConfig::default(),
            IndexKind::Exact,
            &HnswConfig::default(),
            10,
            77,
        )
        .unwrap();
        assert_eq!(report.timesteps.len(), 3);
        assert_eq!(report.timesteps[2].classes_so_far, 12);
        assert_eq!(report.timesteps[2].db_size, 12 * 20);
        for row in &report.timesteps {
            assert!(row.overall_acc >= 0.99, "timestep {} acc {}", row.timestep, row.overall_acc);
        }
        assert!(report.timesteps[0].new_acc.is_none());
        assert!(report.timesteps[1].new_acc.is_some());
    }

    #[test]
    fn sigma_zero_is_exact_everywhere() {
        let mut spec = tight_spec();
        spec.sigma = 0.0;
        spec.separation = 1.0;
        let report = run_continual_simulation(
            &spec,
            &FusionConfig::default(),
            IndexKind::Exact,
            &HnswConfig::default(),
            4,
            5,
        )
        .unwrap();
        for row in &report.timesteps {
            assert_eq!(row.overall_acc, 1.0);
            assert_eq!(row.base_acc, 1.0);
        }
    }

    #[test]
    fn accuracy_columns_are_seed_reproducible() {
        let run = || {
            run_continual_simulation(
                &tight_spec(),
                &FusionConfig::default(),
                IndexKind::Exact,
                &HnswConfig::default(),
                5,
                123,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        for (x, y) in a.timesteps.iter().zip(&b.timesteps) {
            assert_eq!(x.base_acc.to_bits(), y.base_acc.to_bits());
            assert_eq!(x.new_acc.map(f64::to_bits), y.new_acc.map(f64::to_bits));
            assert_eq!(x.overall_acc.to_bits(), y.overall_acc.to_bits());
            assert_eq!(x.db_size, y.db_size);
        }
    }

    #[test]
    fn overall_acc_is_weighted_average_of_splits() {
        let report = run_continual_simulation(
            &tight_spec(),
            &FusionConfig::default(),
            IndexKind::Exact,
            &HnswConfig::default(),
            6,
            9,
        )
        .unwrap();
        for row in &report.timesteps {
            let lo = row
                .new_acc
                .map_or(row.base_acc, |n| n.min(row.base_acc));
            let hi = row
                .new_acc
                .map_or(row.base_acc, |n| n.max(row.base_acc));
            assert!(row.overall_acc >= lo - 1e-12 && row.overall_acc <= hi + 1e-12);
        }
    }

    #[test]
    fn hnsw_backend_runs() {
        let report = run_continual_simulation(
            &tight_spec(),
            &FusionConfig::default(),
            IndexKind::Hnsw,
            &HnswConfig::default(),
            4,
            31,
        )
        .unwrap();
        for row in &report.timesteps {
            assert!(row.overall_acc >= 0.95);
        }
    }
}
