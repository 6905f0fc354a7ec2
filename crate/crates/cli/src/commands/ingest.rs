//! `retseg ingest` — pool instance embeddings from feature files plus mask
//! manifests and append them to the database.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use retseg_core::{
    extract_instance_embeddings, l2_normalize, EmbeddingDatabase, EmbeddingRecord,
};

use crate::commands::{decode_image_masks, read_features, read_manifest};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{write_json_report, Table};

#[derive(Debug, Clone, clap::Args)]
pub struct IngestArgs {
    /// Feature files ("KNFP"), one per image.
    #[arg(long, required = true, num_args = 1..)]
    pub features: Vec<PathBuf>,

    /// Mask manifest (JSON-lines) with class labels.
    #[arg(long)]
    pub masks: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub db: PathBuf,
    pub dim: usize,
    pub seed: u64,
    pub images: usize,
    pub records_added: u64,
    pub total_records: u64,
    pub per_class_added: BTreeMap<String, u64>,
}

pub fn run(args: &IngestArgs, cfg: &RunConfig) -> Result<IngestReport, CliError> {
    let db_path = cfg.db_path()?;
    let manifest = read_manifest(&args.masks)?;

    let mut db: Option<EmbeddingDatabase> = if db_path.exists() {
        Some(EmbeddingDatabase::load_from_path(db_path).map_err(|e| CliError::in_file(db_path, e))?)
    } else {
        None
    };

    let mut per_class: BTreeMap<String, u64> = BTreeMap::new();
    let mut records_added = 0u64;

    for feature_path in &args.features {
        let features = read_features(feature_path)?;
        let db = db.get_or_insert_with(|| {
            EmbeddingDatabase::create(features.map.channels()).expect("channels >= 1")
        });
        if features.map.channels() != db.dim() {
            return Err(CliError::data(format!(
                "{}: feature dim {} does not match database dim {}",
                feature_path.display(),
                features.map.channels(),
                db.dim()
            )));
        }

        let decoded = decode_image_masks(&args.masks, &manifest, features.image_id)?;
        let masks: Vec<_> = decoded.iter().map(|(_, m, _)| m.clone()).collect();
        let pooled = extract_instance_embeddings(&features.map, &masks)
            .map_err(|e| CliError::in_file(feature_path, e))?;

        // One atomic batch per image: a bad mask or label adds nothing.
        let mut batch = Vec::with_capacity(pooled.len());
        let mut batch_classes = Vec::with_capacity(pooled.len());
        for ((mask_index, _, entry), embedding) in decoded.iter().zip(&pooled) {
            let class = entry.class.as_deref().ok_or_else(|| {
                CliError::data(format!(
                    "{} image {} mask {mask_index}: no class label",
                    args.masks.display(),
                    features.image_id
                ))
            })?;
            let class_id = db.register_class(class).map_err(CliError::from)?;
            let vector = l2_normalize(embedding).map_err(|e| {
                CliError::data(format!(
                    "{} image {} mask {mask_index}: {e}",
                    feature_path.display(),
                    features.image_id
                ))
            })?;
            batch.push(EmbeddingRecord::new(vector, class_id, features.image_id));
            batch_classes.push(class.to_owned());
        }
        let added = db.insert_batch(batch).map_err(|e| CliError::in_file(feature_path, e))?;
        records_added += added as u64;
        for class in batch_classes {
            *per_class.entry(class).or_insert(0) += 1;
        }
    }

    let db = db.expect("at least one feature file is required");
    db.save_to_path(db_path).map_err(|e| CliError::in_file(db_path, e))?;

    let report = IngestReport {
        db: db_path.to_path_buf(),
        dim: db.dim(),
        seed: cfg.seed,
        images: args.features.len(),
        records_added,
        total_records: db.len() as u64,
        per_class_added: per_class,
    };
    if let Some(path) = &cfg.report {
        write_json_report(path, &report)?;
    }
    Ok(report)
}

pub fn print_report(report: &IngestReport) {
    println!(
        "ingested {} records from {} image(s) into {} (total {})",
        report.records_added,
        report.images,
        report.db.display(),
        report.total_records
    );
    let mut table = Table::new(vec!["class", "records added"]);
    for (class, count) in &report.per_class_added {
        table.row(vec![class.clone(), count.to_string()]);
    }
    print!("{}", table.render());
}
