//! `retseg segment` — classify every mask proposal under the confidence gate,
//! filter, and stitch a dense semantic map.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use retseg_core::formats::{read_base_probs, write_pgm};
use retseg_core::{
    classify_query, stitch_semantic_map, MaskPrediction, ProbabilityVector, SemanticMap,
};

use crate::commands::{
    build_index, decode_image_masks, load_database, pool_query_embeddings, read_features,
    read_manifest,
};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::write_json_report;

#[derive(Debug, Clone, clap::Args)]
pub struct SegmentArgs {
    /// Query feature file ("KNFP").
    #[arg(long)]
    pub features: PathBuf,

    /// Mask proposal manifest (JSON-lines).
    #[arg(long)]
    pub masks: PathBuf,

    /// Per-mask base probability file (JSON-lines with class-order header).
    #[arg(long)]
    pub base_probs: PathBuf,

    /// Write the stitched map as 16-bit PGM.
    #[arg(long)]
    pub out_map: Option<PathBuf>,

    /// Write per-mask decisions as JSON-lines.
    #[arg(long)]
    pub out_decisions: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecisionRow {
    pub image_id: u64,
    pub mask_index: usize,
    pub class_id: u32,
    pub class_name: String,
    pub class_confidence: f32,
    pub mask_score: f32,
    pub used_retrieval: bool,
    pub fallback: bool,
    /// Survived the confidence filter and entered the stitched map.
    pub kept: bool,
}

#[derive(Debug, Serialize)]
pub struct SegmentOutcome {
    pub seed: u64,
    pub image_id: u64,
    pub decisions: Vec<DecisionRow>,
    pub retrieval_used: usize,
    /// Searches the index actually executed (0 when every base prediction
    /// clears the gate).
    pub index_queries: u64,
    #[serde(skip)]
    pub map: SemanticMap,
}

pub fn run(args: &SegmentArgs, cfg: &RunConfig) -> Result<SegmentOutcome, CliError> {
    let db = load_database(cfg.db_path()?)?;
    let class_count = db.registry().len();
    if class_count == 0 {
        return Err(CliError::data(
            "database registry is empty; ingest labeled data first".into(),
        ));
    }

    let features = read_features(&args.features)?;
    let decoded = decode_image_masks(&args.masks, &read_manifest(&args.masks)?, features.image_id)?;

    let probs_file = std::fs::File::open(&args.base_probs)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", args.base_probs.display())))?;
    let (header, prob_entries) = read_base_probs(std::io::BufReader::new(probs_file))
        .map_err(|e| CliError::in_file(&args.base_probs, e))?;
    if header.classes != db.registry().names() {
        return Err(CliError::data(format!(
            "{}: class order does not match the database registry ({} vs {} classes)",
            args.base_probs.display(),
            header.classes.len(),
            class_count
        )));
    }
    let probs_by_mask: HashMap<(u64, usize), &Vec<f64>> = prob_entries
        .iter()
        .map(|e| ((e.image_id, e.mask_index), &e.probs))
        .collect();

    let dims = {
        let first = &decoded[0].1;
        let dims = first.dims();
        for (i, mask, _) in &decoded {
            if mask.dims() != dims {
                return Err(CliError::data(format!(
                    "image {} mask {i}: dims {}x{} disagree with {}x{}",
                    features.image_id,
                    mask.height(),
                    mask.width(),
                    dims.0,
                    dims.1
                )));
            }
        }
        dims
    };

    let masks: Vec<_> = decoded.iter().map(|(_, m, _)| m.clone()).collect();
    let embeddings = pool_query_embeddings(&features, &masks)?;
    let index = build_index(db.snapshot(), cfg)?;

    let mut decisions = Vec::with_capacity(decoded.len());
    let mut predictions = Vec::with_capacity(decoded.len());
    for ((mask_index, mask, entry), embedding) in decoded.iter().zip(&embeddings) {
        let probs = probs_by_mask
            .get(&(features.image_id, *mask_index))
            .ok_or_else(|| {
                CliError::data(format!(
                    "{}: no base probabilities for image {} mask {mask_index}",
                    args.base_probs.display(),
                    features.image_id
                ))
            })?;
        let values: Vec<f32> = probs.iter().map(|&p| p as f32).collect();
        let sum: f64 = values.iter().map(|&v| v as f64).sum();
        let p_base = ProbabilityVector::new(values, (sum - 1.0).abs() <= 1e-5)
            .map_err(|e| CliError::in_file(&args.base_probs, e))?;

        let decision = classify_query(embedding, &p_base, index.as_ref(), &cfg.fusion, class_count)?;
        // λ·p_ret can exceed 1 on its maximum; the stitching score lives in
        // [0, 1], so cap it.
        let class_confidence = decision.p_final.max().min(1.0);
        let mask_score = entry.mask_score.unwrap_or(1.0);
        let kept = class_confidence >= cfg.class_threshold.clamp(0.0, 1.0)
            && mask_score >= cfg.mask_threshold.clamp(0.0, 1.0);

        decisions.push(DecisionRow {
            image_id: features.image_id,
            mask_index: *mask_index,
            class_id: decision.class_id,
            class_name: db
                .registry()
                .name_of(decision.class_id)
                .unwrap_or("?")
                .to_owned(),
            class_confidence,
            mask_score,
            used_retrieval: decision.used_retrieval,
            fallback: decision.fallback,
            kept,
        });
        if kept {
            predictions.push(MaskPrediction::new(
                mask.clone(),
                decision.class_id,
                class_confidence,
                mask_score,
            )?);
        }
    }

    let map = stitch_semantic_map(&predictions, dims, cfg.stitch)?;
    let outcome = SegmentOutcome {
        seed: cfg.seed,
        image_id: features.image_id,
        retrieval_used: decisions.iter().filter(|d| d.used_retrieval).count(),
        index_queries: index.queries_issued(),
        decisions,
        map,
    };

    if let Some(path) = &args.out_map {
        let file = std::fs::File::create(path)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        write_pgm(std::io::BufWriter::new(file), &outcome.map)
            .map_err(|e| CliError::in_file(path, e))?;
    }
    if let Some(path) = &args.out_decisions {
        let mut file = std::fs::File::create(path)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        for row in &outcome.decisions {
            let line = serde_json::to_string(row)
                .map_err(|e| CliError::data(format!("decision row: {e}")))?;
            writeln!(file, "{line}")
                .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        }
    }
    if let Some(path) = &cfg.report {
        write_json_report(path, &outcome)?;
    }
    Ok(outcome)
}

pub fn print_report(outcome: &SegmentOutcome) {
    println!(
        "image {}: {} masks, {} went through retrieval, {} kept after filtering ({} index queries)",
        outcome.image_id,
        outcome.decisions.len(),
        outcome.retrieval_used,
        outcome.decisions.iter().filter(|d| d.kept).count(),
        outcome.index_queries,
    );
}
