//! Run configuration: defaults, the JSON config file, and flag overrides.
//!
//! Precedence is defaults < config file < command-line flags. The global
//! `--seed` drives every seeded component, including HNSW level assignment.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use retseg_core::{FusionConfig, HnswConfig, IndexKind, OverlapStrategy};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Database file ("KNDB").
    pub db: Option<PathBuf>,
    pub seed: u64,
    pub index: IndexKind,
    pub fusion: FusionConfig,
    pub hnsw: HnswConfig,
    pub stitch: OverlapStrategy,
    /// Thresholds for confidence-filtering stitched masks.
    pub class_threshold: f32,
    pub mask_threshold: f32,
    /// Where to write the JSON run report, if anywhere.
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            db: None,
            seed: 0,
            index: IndexKind::Exact,
            fusion: FusionConfig::default(),
            hnsw: HnswConfig::default(),
            stitch: OverlapStrategy::default(),
            class_threshold: 0.0,
            mask_threshold: 0.0,
            report: None,
        }
    }
}

/// Flags shared by every subcommand; `None` means "not given".
#[derive(Debug, Clone, Default, clap::Args)]
pub struct GlobalArgs {
    /// JSON config file mirroring the run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Database file path.
    #[arg(long, global = true)]
    pub db: Option<PathBuf>,

    /// Seed for every randomized component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Retrieval backend: exact | hnsw.
    #[arg(long, global = true)]
    pub index: Option<String>,

    /// Neighbors retrieved per non-confident query.
    #[arg(long, global = true)]
    pub k: Option<usize>,

    /// Retrieval weight applied when the gate routes to retrieval.
    #[arg(long, global = true)]
    pub lambda: Option<f32>,

    /// Confidence gate on the base prediction.
    #[arg(long, global = true)]
    pub threshold: Option<f32>,

    /// HNSW search beam width.
    #[arg(long, global = true)]
    pub ef_search: Option<usize>,

    /// Overlap resolution when stitching: product | class-only.
    #[arg(long, global = true)]
    pub stitch: Option<String>,

    /// Write a JSON run report here.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }

    /// Apply file and flag layers on top of the defaults.
    pub fn resolve(globals: &GlobalArgs) -> Result<Self, CliError> {
        let mut cfg = match &globals.config {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        if let Some(db) = &globals.db {
            cfg.db = Some(db.clone());
        }
        if let Some(seed) = globals.seed {
            cfg.seed = seed;
            cfg.hnsw.seed = seed;
        }
        if let Some(index) = &globals.index {
            cfg.index = IndexKind::from_str(index).map_err(CliError::from_config_error)?;
        }
        if let Some(k) = globals.k {
            cfg.fusion.k = k;
        }
        if let Some(lambda) = globals.lambda {
            cfg.fusion.lambda = lambda;
        }
        if let Some(threshold) = globals.threshold {
            cfg.fusion.threshold = threshold;
        }
        if let Some(ef) = globals.ef_search {
            cfg.hnsw.ef_search = ef;
        }
        if let Some(stitch) = &globals.stitch {
            cfg.stitch = OverlapStrategy::from_str(stitch).map_err(CliError::from_config_error)?;
        }
        if let Some(report) = &globals.report {
            cfg.report = Some(report.clone());
        }
        cfg.fusion.validate().map_err(CliError::from_config_error)?;
        cfg.hnsw.validate().map_err(CliError::from_config_error)?;
        Ok(cfg)
    }

    /// The database path, required by most commands.
    pub fn db_path(&self) -> Result<&Path, CliError> {
        self.db
            .as_deref()
            .ok_or_else(|| CliError::config("no database path (use --db or the config file)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.fusion.k, 16);
        assert!((cfg.fusion.lambda - 1.2).abs() < 1e-6);
        assert!((cfg.fusion.threshold - 0.7).abs() < 1e-6);
        assert_eq!(cfg.hnsw.ef_construction, 100);
        assert_eq!(cfg.hnsw.ef_search, 64);
        assert_eq!(cfg.index, IndexKind::Exact);
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"seed": 7, "fusion": {"k": 4, "lambda": 2.0}, "index": "hnsw"}"#,
        )
        .unwrap();
        let globals = GlobalArgs {
            config: Some(path),
            k: Some(9),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&globals).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.fusion.k, 9); // flag wins
        assert!((cfg.fusion.lambda - 2.0).abs() < 1e-6); // file wins over default
        assert_eq!(cfg.index, IndexKind::Hnsw);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let globals = GlobalArgs {
            threshold: Some(1.5),
            ..Default::default()
        };
        let err = RunConfig::resolve(&globals).unwrap_err();
        assert_eq!(err.code, 2);

        let globals = GlobalArgs {
            index: Some("flat".into()),
            ..Default::default()
        };
        assert_eq!(RunConfig::resolve(&globals).unwrap_err().code, 2);
    }

    #[test]
    fn seed_flag_reaches_hnsw() {
        let globals = GlobalArgs {
            seed: Some(99),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&globals).unwrap();
        assert_eq!(cfg.hnsw.seed, 99);
    }
}
