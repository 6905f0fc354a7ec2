//! `retseg db-stats` — size and composition of a database file.

use serde::Serialize;

use crate::commands::load_database;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{write_json_report, Table};

#[derive(Debug, Clone, clap::Args)]
pub struct StatsArgs {
    /// Emit JSON to stdout instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub seed: u64,
    pub dim: usize,
    pub normalized: bool,
    pub total_records: u64,
    pub class_count: usize,
    pub vector_payload_bytes: u64,
    pub approx_bytes: u64,
    pub per_class: Vec<(String, u64)>,
}

pub fn run(cfg: &RunConfig) -> Result<StatsReport, CliError> {
    let db = load_database(cfg.db_path()?)?;
    let stats = db.stats();
    let per_class = stats
        .per_class_counts
        .iter()
        .enumerate()
        .map(|(id, &count)| {
            (
                db.registry().name_of(id as u32).unwrap_or("?").to_owned(),
                count,
            )
        })
        .collect();
    let report = StatsReport {
        seed: cfg.seed,
        dim: db.dim(),
        normalized: db.normalized(),
        total_records: stats.total_records,
        class_count: stats.class_count,
        vector_payload_bytes: db.vector_payload_bytes(),
        approx_bytes: stats.approx_bytes,
        per_class,
    };
    if let Some(path) = &cfg.report {
        write_json_report(path, &report)?;
    }
    Ok(report)
}

pub fn print_report(report: &StatsReport, json: bool) -> Result<(), CliError> {
    if json {
        let text = serde_json::to_string_pretty(report)
            .map_err(|e| CliError::data(format!("stats serialization: {e}")))?;
        println!("{text}");
        return Ok(());
    }
    println!(
        "dim {} ({} bytes/vector), normalized: {}, {} records, {} classes, ~{} bytes",
        report.dim,
        report.vector_payload_bytes,
        report.normalized,
        report.total_records,
        report.class_count,
        report.approx_bytes
    );
    let mut table = Table::new(vec!["class", "records"]);
    for (name, count) in &report.per_class {
        table.row(vec![name.clone(), count.to_string()]);
    }
    print!("{}", table.render());
    Ok(())
}
