//! `retseg bench` — queries/sec and recall@k for the exact scan versus HNSW
//! at a sweep of beam widths.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use retseg_core::{
    recall_at_k, Embedding, Error as CoreError, ExactIndex, HnswIndex, RetrievalHit, Snapshot,
    VectorIndex,
};

use crate::commands::load_database;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{fmt_f64, write_csv, write_json_report, Table};

#[derive(Debug, Clone, clap::Args)]
pub struct BenchArgs {
    /// Number of benchmark queries.
    #[arg(long, default_value_t = 200)]
    pub queries: usize,

    /// HNSW beam widths to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![16usize, 32, 64, 128])]
    pub ef_sweep: Vec<usize>,

    /// Write rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub ef_search: Option<usize>,
    pub queries_per_s: f64,
    pub recall_at_k: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub seed: u64,
    pub records: usize,
    pub dim: usize,
    pub k: usize,
    pub queries: usize,
    pub rows: Vec<BenchRow>,
}

/// Queries are stored vectors nudged by a little noise, so they land near
/// real neighborhoods.
pub fn perturbed_queries(snapshot: &Snapshot, count: usize, seed: u64) -> Vec<Embedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base = snapshot.vector(rng.random_range(0..snapshot.len()));
            loop {
                let v: Vec<f32> = base
                    .iter()
                    .map(|&x| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        x + 0.05 * g as f32
                    })
                    .collect();
                if let Ok(e) = Embedding::new(v).and_then(|e| e.l2_normalized()) {
                    return e;
                }
            }
        })
        .collect()
}

pub fn run(args: &BenchArgs, cfg: &RunConfig) -> Result<BenchReport, CliError> {
    let db = load_database(cfg.db_path()?)?;
    if db.is_empty() {
        return Err(CoreError::NoRecords.into());
    }
    if args.queries == 0 {
        return Err(CliError::config("--queries must be >= 1".into()));
    }

    let snapshot = db.snapshot();
    let queries = perturbed_queries(&snapshot, args.queries, cfg.seed);
    let k = cfg.fusion.k;

    let exact = ExactIndex::build(snapshot.clone());
    let started = Instant::now();
    let truth: Vec<Vec<RetrievalHit>> = queries
        .iter()
        .map(|q| exact.query(q, k))
        .collect::<Result<_, _>>()?;
    let exact_elapsed = started.elapsed().as_secs_f64();

    let mut rows = vec![BenchRow {
        method: "exact".into(),
        ef_search: None,
        queries_per_s: args.queries as f64 / exact_elapsed,
        recall_at_k: 1.0,
    }];

    let hnsw = HnswIndex::build(snapshot, cfg.hnsw.clone()).map_err(CliError::from_config_error)?;
    for &ef in &args.ef_sweep {
        let started = Instant::now();
        let mut recall_sum = 0.0;
        for (q, exact_hits) in queries.iter().zip(&truth) {
            let hits = hnsw.query_with_ef(q, k, ef)?;
            recall_sum += recall_at_k(&hits, exact_hits)?;
        }
        let elapsed = started.elapsed().as_secs_f64();
        rows.push(BenchRow {
            method: "hnsw".into(),
            ef_search: Some(ef),
            queries_per_s: args.queries as f64 / elapsed,
            recall_at_k: recall_sum / args.queries as f64,
        });
    }

    let report = BenchReport {
        seed: cfg.seed,
        records: db.len(),
        dim: db.dim(),
        k,
        queries: args.queries,
        rows,
    };

    if let Some(path) = &args.csv {
        let rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.ef_search.map(|e| e.to_string()).unwrap_or_default(),
                    fmt_f64(r.queries_per_s),
                    fmt_f64(r.recall_at_k),
                ]
            })
            .collect();
        write_csv(path, &["method", "ef_search", "queries_per_s", "recall_at_k"], &rows)?;
    }
    if let Some(path) = &cfg.report {
        write_json_report(path, &report)?;
    }
    Ok(report)
}

pub fn print_report(report: &BenchReport) {
    println!(
        "{} records, dim {}, k {}, {} queries",
        report.records, report.dim, report.k, report.queries
    );
    let mut table = Table::new(vec!["method", "ef_search", "queries/s", "recall@k"]);
    for row in &report.rows {
        table.row(vec![
            row.method.clone(),
            row.ef_search.map(|e| e.to_string()).unwrap_or_default(),
            format!("{:.1}", row.queries_per_s),
            fmt_f64(row.recall_at_k),
        ]);
    }
    print!("{}", table.render());
}
