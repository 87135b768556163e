//! Line-delimited JSON report plus an aligned text table.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_JSONL: &str = "metrics.jsonl";
pub const REPORT_TABLE: &str = "metrics.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub auc: f64,
    pub logloss: f64,
    /// Fractional reduction in activated embedding parameters; absent for
    /// methods without early selection.
    pub delta_pae: Option<f64>,
    pub n: u64,
    pub activated_params_avg: f64,
    pub lookups_avg: f64,
    /// Number of seeded runs averaged into this row.
    pub runs: u64,
}

/// Table view: rows sorted by AUC descending, ties by method name.
pub fn format_table(rows: &[ReportRow]) -> String {
    let mut sorted: Vec<&ReportRow> = rows.iter().collect();
    sorted.sort_by(|a, b| b.auc.total_cmp(&a.auc).then_with(|| a.method.cmp(&b.method)));
    let width = sorted.iter().map(|r| r.method.len()).max().unwrap_or(0).max("Method".len());
    let mut out = format!("{:<width$}  {:>8}  {:>8}  {:>8}\n", "Method", "AUC", "Logloss", "ΔPaE");
    for r in sorted {
        let pae = r
            .delta_pae
            .map_or_else(|| "-".to_string(), |v| format!("{:.2}%", v * 100.0));
        out.push_str(&format!(
            "{:<width$}  {:>8.4}  {:>8.4}  {:>8}\n",
            r.method, r.auc, r.logloss, pae
        ));
    }
    out
}

/// Writes `metrics.jsonl` (input order) and `metrics.txt` into `dir`.
pub fn emit_report(rows: &[ReportRow], dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one row".into()));
    }
    fs::create_dir_all(dir)?;
    let mut jsonl = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut jsonl, r)?;
        jsonl.write_all(b"\n")?;
    }
    fs::write(dir.join(REPORT_JSONL), jsonl)?;
    fs::write(dir.join(REPORT_TABLE), format_table(rows))?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line)?);
        }
    }
    Ok(rows)
}
