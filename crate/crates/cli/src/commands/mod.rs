//! Subcommand implementations. Each is an ordinary library function so tests
//! and the acceptance suite can drive them in-process; `main` only does
//! argument plumbing.

pub mod bench;
pub mod eval;
pub mod ingest;
pub mod query;
pub mod segment;
pub mod simulate;
pub mod stats;

use std::path::Path;

use retseg_core::formats::{read_feature_file, read_mask_manifest, FeatureFile, MaskManifestEntry};
use retseg_core::{
    extract_instance_embeddings, l2_normalize, Embedding, EmbeddingDatabase, ExactIndex,
    HnswIndex, IndexKind, InstanceMask, Snapshot, VectorIndex,
};

use crate::config::RunConfig;
use crate::error::CliError;

pub(crate) fn load_database(path: &Path) -> Result<EmbeddingDatabase, CliError> {
    if !path.exists() {
        return Err(CliError::data(format!(
            "database {} does not exist",
            path.display()
        )));
    }
    EmbeddingDatabase::load_from_path(path).map_err(|e| CliError::in_file(path, e))
}

pub(crate) fn build_index(
    snapshot: Snapshot,
    cfg: &RunConfig,
) -> Result<Box<dyn VectorIndex>, CliError> {
    Ok(match cfg.index {
        IndexKind::Exact => Box::new(ExactIndex::build(snapshot)),
        IndexKind::Hnsw => Box::new(
            HnswIndex::build(snapshot, cfg.hnsw.clone()).map_err(CliError::from_config_error)?,
        ),
    })
}

pub(crate) fn read_features(path: &Path) -> Result<FeatureFile, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    read_feature_file(std::io::BufReader::new(file)).map_err(|e| CliError::in_file(path, e))
}

pub(crate) fn read_manifest(path: &Path) -> Result<Vec<MaskManifestEntry>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    read_mask_manifest(std::io::BufReader::new(file)).map_err(|e| CliError::in_file(path, e))
}

/// Decode the manifest entries belonging to one image, in file order, with
/// diagnostics naming the manifest and entry on failure.
pub(crate) fn decode_image_masks(
    manifest_path: &Path,
    entries: &[MaskManifestEntry],
    image_id: u64,
) -> Result<Vec<(usize, InstanceMask, MaskManifestEntry)>, CliError> {
    let mut out = Vec::new();
    for entry in entries.iter().filter(|e| e.image_id == image_id) {
        let mask_index = out.len();
        let mask = entry.to_mask().map_err(|e| {
            CliError::data(format!(
                "{} image {image_id} mask {mask_index}: {e}",
                manifest_path.display()
            ))
        })?;
        out.push((mask_index, mask, entry.clone()));
    }
    if out.is_empty() {
        return Err(CliError::data(format!(
            "{} holds no masks for image {image_id}",
            manifest_path.display()
        )));
    }
    Ok(out)
}

/// Pool one normalized query embedding per mask.
pub(crate) fn pool_query_embeddings(
    features: &FeatureFile,
    masks: &[InstanceMask],
) -> Result<Vec<Embedding>, CliError> {
    let pooled = extract_instance_embeddings(&features.map, masks)?;
    pooled
        .iter()
        .map(|e| l2_normalize(e).map_err(CliError::from))
        .collect()
}
