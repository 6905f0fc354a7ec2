//! Seeded synthetic embedding clusters: a desk-scale stand-in for extractor
//! features, used by the continual-expansion harness, the benches, and the
//! acceptance suite.
//!
//! Per class, a centroid direction is drawn on the unit sphere and scaled to
//! radius R; rejection sampling enforces the pairwise separation. Samples are
//! `centroid + N(0, σ²·I)`, then L2-normalized. Everything is deterministic
//! per seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Embedding;

const CENTROID_ATTEMPTS: usize = 1000;

/// Shape of a synthetic labeled-cluster dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Minimum pairwise distance between (scaled) centroids.
    pub separation: f64,
    /// Isotropic noise level around each centroid.
    pub sigma: f64,
    /// Ordered partition of the classes into timestep increments. Must sum to
    /// `class_count`.
    pub schedule: Vec<usize>,
}

impl SyntheticSpec {
    /// Single-increment spec covering all classes at once.
    pub fn flat(class_count: usize, per_class: usize, dim: usize, separation: f64, sigma: f64) -> Self {
        Self {
            class_count,
            per_class,
            dim,
            separation,
            sigma,
            schedule: vec![class_count],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.per_class == 0 || self.dim == 0 {
            return Err(Error::InvalidConfig(
                "class_count, per_class, and dim must all be >= 1".into(),
            ));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "separation must be >= 0, got {}",
                self.separation
            )));
        }
        if self.schedule.is_empty() || self.schedule.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig("schedule increments must be >= 1".into()));
        }
        let total: usize = self.schedule.iter().sum();
        if total != self.class_count {
            return Err(Error::InvalidConfig(format!(
                "schedule sums to {total} but class_count is {}",
                self.class_count
            )));
        }
        Ok(())
    }
}

/// Generated clusters plus the centroids that produced them.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    spec: SyntheticSpec,
    /// Scaled centroids, one per class.
    centroids: Vec<Vec<f64>>,
    samples: Vec<Embedding>,
    class_ids: Vec<u32>,
}

impl SyntheticDataset {
    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn centroid(&self, class: usize) -> &[f64] {
        &self.centroids[class]
    }

    /// Samples in class-major order (`per_class` consecutive per class).
    pub fn samples(&self) -> &[Embedding] {
        &self.samples
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    /// Sample range belonging to one class.
    pub fn class_samples(&self, class: usize) -> &[Embedding] {
        let per = self.spec.per_class;
        &self.samples[class * per..(class + 1) * per]
    }

    /// Classify by highest cosine against the generating centroids (the
    /// independent oracle for cluster data).
    pub fn nearest_centroid(&self, v: &[f32]) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (c, centroid) in self.centroids.iter().enumerate() {
            let norm: f64 = centroid.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: f64 = centroid.iter().zip(v).map(|(&a, &b)| a * b as f64).sum();
            let cos = if norm > 0.0 { dot / norm } else { 0.0 };
            if cos > best_dot {
                best_dot = cos;
                best = c;
            }
        }
        best
    }

    /// Fresh held-out draws from the first `class_limit` clusters,
    /// `per_class` each, deterministic per seed.
    pub fn draw_queries(
        &self,
        class_limit: usize,
        per_class: usize,
        seed: u64,
    ) -> (Vec<Embedding>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = class_limit.min(self.spec.class_count);
        let mut queries = Vec::with_capacity(limit * per_class);
        let mut labels = Vec::with_capacity(limit * per_class);
        for c in 0..limit {
            for _ in 0..per_class {
                queries.push(sample_around(&self.centroids[c], self.spec.sigma, &mut rng));
                labels.push(c as u32);
            }
        }
        (queries, labels)
    }
}

fn random_direction(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn sample_around(centroid: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Embedding {
    loop {
        let v: Vec<f64> = centroid
            .iter()
            .map(|&c| {
                let g: f64 = StandardNormal.sample(rng);
                c + sigma * g
            })
            .collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let values = v.into_iter().map(|x| (x / norm) as f32).collect();
            return Embedding::new(values).expect("normalized sample is finite");
        }
    }
}

/// Generate the dataset described by `spec`, deterministically for the seed.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Radius: random unit directions sit ~sqrt(2)·R apart, so R = separation
    // leaves comfortable rejection headroom in moderate dimension.
    let radius = if spec.separation > 0.0 { spec.separation } else { 1.0 };

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(spec.class_count);
    for class in 0..spec.class_count {
        let mut placed = false;
        for _ in 0..CENTROID_ATTEMPTS {
            let candidate: Vec<f64> = random_direction(spec.dim, &mut rng)
                .into_iter()
                .map(|x| x * radius)
                .collect();
            let ok = centroids.iter().all(|existing| {
                let d2: f64 = existing
                    .iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() >= spec.separation
            });
            if ok {
                centroids.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasibleSpec(format!(
                "could not place centroid {class} of {} at separation {} in dim {}",
                spec.class_count, spec.separation, spec.dim
            )));
        }
    }

    let mut samples = Vec::with_capacity(spec.class_count * spec.per_class);
    let mut class_ids = Vec::with_capacity(spec.class_count * spec.per_class);
    for (c, centroid) in centroids.iter().enumerate() {
        for _ in 0..spec.per_class {
            samples.push(sample_around(centroid, spec.sigma, &mut rng));
            class_ids.push(c as u32);
        }
    }

    Ok(SyntheticDataset {
        spec: spec.clone(),
        centroids,
        samples,
        class_ids,
    })
}
