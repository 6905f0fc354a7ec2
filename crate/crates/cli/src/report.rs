//! Plain-text tables for stdout plus CSV and JSON report writers.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

/// Fixed-width text table; all rows must match the header arity.
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: Vec<S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row<S: Into<String>>(&mut self, cells: Vec<S>) {
        let cells: Vec<String> = cells.into_iter().map(Into::into).collect();
        debug_assert_eq!(cells.len(), self.headers.len());
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(String::len).collect();
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.len());
            }
        }
        let mut out = String::new();
        let format_row = |cells: &[String]| {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{:w$}", c, w = widths[i]))
                .collect::<Vec<_>>()
                .join("  ")
        };
        out.push_str(&format_row(&self.headers));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format_row(row));
            out.push('\n');
        }
        out
    }
}

/// Write rows as CSV with a header line. Cells are written verbatim; callers
/// only emit numeric and identifier-like values.
pub fn write_csv(path: &Path, headers: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    let mut emit = |cells: &[String]| -> std::io::Result<()> {
        writeln!(file, "{}", cells.join(","))
    };
    emit(&headers.iter().map(|s| s.to_string()).collect::<Vec<_>>())
        .and_then(|_| rows.iter().try_for_each(|r| emit(r)))
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    file.flush()
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json_report<T: Serialize>(path: &Path, report: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::data(format!("report serialization: {e}")))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// Compact float formatting for tables and CSV.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

pub fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
