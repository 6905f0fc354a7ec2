//! `retseg eval` — streaming mIoU over paired prediction / ground-truth maps.

use std::path::PathBuf;

use serde::Serialize;

use retseg_core::formats::read_pgm;
use retseg_core::{ConfusionMatrix, Error as CoreError};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{fmt_f64, fmt_opt_f64, write_csv, write_json_report, Table};

#[derive(Debug, Clone, clap::Args)]
pub struct EvalArgs {
    /// Predicted maps (16-bit PGM), paired with --gt by position.
    #[arg(long, required = true, num_args = 1..)]
    pub pred: Vec<PathBuf>,

    /// Ground-truth maps (16-bit PGM).
    #[arg(long, required = true, num_args = 1..)]
    pub gt: Vec<PathBuf>,

    /// Number of classes.
    #[arg(long)]
    pub classes: usize,

    /// Count ground-truth void pixels instead of ignoring them.
    #[arg(long)]
    pub include_void: bool,

    /// Write per-class rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub seed: u64,
    pub images: usize,
    pub classes: usize,
    pub ignore_void: bool,
    pub evaluated_pixels: u64,
    pub per_class_iou: Vec<Option<f64>>,
    pub intersections: Vec<u64>,
    pub unions: Vec<u64>,
    pub mean_iou: f64,
}

pub fn run(args: &EvalArgs, cfg: &RunConfig) -> Result<EvalReport, CliError> {
    if args.pred.is_empty() || args.pred.len() != args.gt.len() {
        return Err(CliError::from(CoreError::InvalidDataset(format!(
            "{} prediction(s) paired with {} ground-truth map(s)",
            args.pred.len(),
            args.gt.len()
        ))));
    }
    if args.classes == 0 {
        return Err(CliError::config("--classes must be >= 1".into()));
    }

    let mut confusion = ConfusionMatrix::new(args.classes);
    for (pred_path, gt_path) in args.pred.iter().zip(&args.gt) {
        let pred = read_map(pred_path)?;
        let gt = read_map(gt_path)?;
        confusion.accumulate(&pred, &gt).map_err(|e| {
            CliError::data(format!(
                "{} vs {}: {e}",
                pred_path.display(),
                gt_path.display()
            ))
        })?;
    }

    let ignore_void = !args.include_void;
    let iou = confusion.miou(ignore_void);
    let report = EvalReport {
        seed: cfg.seed,
        images: args.pred.len(),
        classes: args.classes,
        ignore_void,
        evaluated_pixels: iou.evaluated_pixels,
        per_class_iou: iou.per_class.clone(),
        intersections: iou.intersections.clone(),
        unions: iou.unions.clone(),
        mean_iou: iou.mean,
    };

    if let Some(path) = &args.csv {
        let rows: Vec<Vec<String>> = (0..args.classes)
            .map(|c| {
                vec![
                    c.to_string(),
                    fmt_opt_f64(report.per_class_iou[c]),
                    report.intersections[c].to_string(),
                    report.unions[c].to_string(),
                ]
            })
            .collect();
        write_csv(path, &["class_id", "iou", "intersection", "union"], &rows)?;
    }
    if let Some(path) = &cfg.report {
        write_json_report(path, &report)?;
    }
    Ok(report)
}

fn read_map(path: &std::path::Path) -> Result<retseg_core::SemanticMap, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    read_pgm(std::io::BufReader::new(file)).map_err(|e| CliError::in_file(path, e))
}

pub fn print_report(report: &EvalReport) {
    let mut table = Table::new(vec!["class", "iou", "intersection", "union"]);
    for c in 0..report.classes {
        table.row(vec![
            c.to_string(),
            fmt_opt_f64(report.per_class_iou[c]),
            report.intersections[c].to_string(),
            report.unions[c].to_string(),
        ]);
    }
    print!("{}", table.render());
    println!(
        "mean IoU over {} image(s), {} pixel(s): {}",
        report.images,
        report.evaluated_pixels,
        fmt_f64(report.mean_iou)
    );
}
