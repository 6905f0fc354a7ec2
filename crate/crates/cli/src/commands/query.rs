//! `retseg query` — pool query embeddings and print ranked neighbors. With
//! the HNSW backend the exact result is also computed so recall@k can be
//! reported.

use std::path::PathBuf;

use serde::Serialize;

use retseg_core::{recall_at_k, Error as CoreError, ExactIndex, IndexKind, VectorIndex};

use crate::commands::{
    build_index, decode_image_masks, load_database, pool_query_embeddings, read_features,
    read_manifest,
};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{fmt_f64, write_csv, write_json_report, Table};

#[derive(Debug, Clone, clap::Args)]
pub struct QueryArgs {
    /// Query feature file ("KNFP").
    #[arg(long)]
    pub features: PathBuf,

    /// Mask manifest holding the query mask(s).
    #[arg(long)]
    pub masks: PathBuf,

    /// Query only this mask (default: every mask for the image).
    #[arg(long)]
    pub mask_index: Option<usize>,

    /// Write the ranked hits as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryRow {
    pub mask_index: usize,
    pub rank: usize,
    pub record_index: usize,
    pub class_id: u32,
    pub class_name: String,
    pub similarity: f32,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryReport {
    pub seed: u64,
    pub k: usize,
    pub rows: Vec<QueryRow>,
    /// Mean recall@k of HNSW against exact, when the HNSW backend is used.
    pub recall_at_k: Option<f64>,
}

pub fn run(args: &QueryArgs, cfg: &RunConfig) -> Result<QueryReport, CliError> {
    let db = load_database(cfg.db_path()?)?;
    if db.is_empty() {
        return Err(CoreError::NoRecords.into());
    }

    let features = read_features(&args.features)?;
    let decoded = decode_image_masks(&args.masks, &read_manifest(&args.masks)?, features.image_id)?;
    let selected: Vec<_> = match args.mask_index {
        Some(want) => {
            let found = decoded.into_iter().find(|(i, _, _)| *i == want);
            vec![found.ok_or_else(|| {
                CliError::data(format!("image {} has no mask {want}", features.image_id))
            })?]
        }
        None => decoded,
    };
    let masks: Vec<_> = selected.iter().map(|(_, m, _)| m.clone()).collect();
    let embeddings = pool_query_embeddings(&features, &masks)?;

    let snapshot = db.snapshot();
    let index = build_index(snapshot.clone(), cfg)?;
    let exact_for_recall = match cfg.index {
        IndexKind::Hnsw => Some(ExactIndex::build(snapshot)),
        IndexKind::Exact => None,
    };

    let k = cfg.fusion.k;
    let mut rows = Vec::new();
    let mut recall_sum = 0.0;
    for ((mask_index, _, _), embedding) in selected.iter().zip(&embeddings) {
        let hits = index.query(embedding, k)?;
        if let Some(exact) = &exact_for_recall {
            let truth = exact.query(embedding, k)?;
            recall_sum += recall_at_k(&hits, &truth)?;
        }
        for (rank, hit) in hits.iter().enumerate() {
            rows.push(QueryRow {
                mask_index: *mask_index,
                rank,
                record_index: hit.record_index,
                class_id: hit.class_id,
                class_name: db
                    .registry()
                    .name_of(hit.class_id)
                    .unwrap_or("?")
                    .to_owned(),
                similarity: hit.similarity,
            });
        }
    }

    let report = QueryReport {
        seed: cfg.seed,
        k,
        rows,
        recall_at_k: exact_for_recall.map(|_| recall_sum / selected.len() as f64),
    };

    if let Some(path) = &args.csv {
        let csv_rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.mask_index.to_string(),
                    r.rank.to_string(),
                    r.record_index.to_string(),
                    r.class_id.to_string(),
                    r.class_name.clone(),
                    fmt_f64(r.similarity as f64),
                ]
            })
            .collect();
        write_csv(
            path,
            &["mask_index", "rank", "record_index", "class_id", "class_name", "similarity"],
            &csv_rows,
        )?;
    }
    if let Some(path) = &cfg.report {
        write_json_report(path, &report)?;
    }
    Ok(report)
}

pub fn print_report(report: &QueryReport) {
    let mut table = Table::new(vec!["mask", "rank", "record", "class", "similarity"]);
    for row in &report.rows {
        table.row(vec![
            row.mask_index.to_string(),
            row.rank.to_string(),
            row.record_index.to_string(),
            format!("{} ({})", row.class_name, row.class_id),
            fmt_f64(row.similarity as f64),
        ]);
    }
    print!("{}", table.render());
    if let Some(recall) = report.recall_at_k {
        println!("recall@{} vs exact: {}", report.k, fmt_f64(recall));
    }
}
