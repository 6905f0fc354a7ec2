//! `retseg simulate` — the class-incremental vocabulary expansion harness on
//! seeded synthetic clusters.

use std::path::PathBuf;

use retseg_core::{run_continual_simulation, SimulationReport, SyntheticSpec};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{fmt_f64, fmt_opt_f64, write_csv, write_json_report, Table};

#[derive(Debug, Clone, clap::Args)]
pub struct SimulateArgs {
    /// Classes present from timestep 0.
    #[arg(long, default_value_t = 100)]
    pub base_classes: usize,

    /// New classes added at each later timestep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![5usize, 10, 30])]
    pub increments: Vec<usize>,

    /// Stored embeddings per class.
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,

    /// Embedding dimension.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,

    /// Cluster noise level.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,

    /// Minimum centroid separation (defaults to 10·sigma when omitted).
    #[arg(long)]
    pub separation: Option<f64>,

    /// Fresh held-out queries per class at every timestep.
    #[arg(long, default_value_t = 20)]
    pub queries_per_class: usize,

    /// Write timestep rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn to_spec(&self) -> SyntheticSpec {
        let mut schedule = vec![self.base_classes];
        schedule.extend(&self.increments);
        let class_count = schedule.iter().sum();
        SyntheticSpec {
            class_count,
            per_class: self.per_class,
            dim: self.dim,
            separation: self.separation.unwrap_or(10.0 * self.sigma),
            sigma: self.sigma,
            schedule,
        }
    }
}

pub fn run(args: &SimulateArgs, cfg: &RunConfig) -> Result<SimulationReport, CliError> {
    let spec = args.to_spec();
    let report = run_continual_simulation(
        &spec,
        &cfg.fusion,
        cfg.index,
        &cfg.hnsw,
        args.queries_per_class,
        cfg.seed,
    )?;

    if let Some(path) = &args.csv {
        let rows: Vec<Vec<String>> = report
            .timesteps
            .iter()
            .map(|t| {
                vec![
                    t.timestep.to_string(),
                    t.classes_so_far.to_string(),
                    fmt_f64(t.base_acc),
                    fmt_opt_f64(t.new_acc),
                    fmt_f64(t.overall_acc),
                    t.db_size.to_string(),
                    format!("{:.9}", t.query_latency_s),
                ]
            })
            .collect();
        write_csv(
            path,
            &[
                "timestep",
                "classes_so_far",
                "base_acc",
                "new_acc",
                "overall_acc",
                "db_size",
                "query_latency_s",
            ],
            &rows,
        )?;
    }
    if let Some(path) = &cfg.report {
        write_json_report(path, &report)?;
    }
    Ok(report)
}

pub fn print_report(report: &SimulationReport) {
    let mut table = Table::new(vec![
        "timestep",
        "classes",
        "base_acc",
        "new_acc",
        "overall_acc",
        "db_size",
        "latency_s",
    ]);
    for t in &report.timesteps {
        table.row(vec![
            t.timestep.to_string(),
            t.classes_so_far.to_string(),
            fmt_f64(t.base_acc),
            fmt_opt_f64(t.new_acc),
            fmt_f64(t.overall_acc),
            t.db_size.to_string(),
            format!("{:.9}", t.query_latency_s),
        ]);
    }
    print!("{}", table.render());
}
