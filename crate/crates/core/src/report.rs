//! Plot-ready CSV output.
//!
//! Rows file: `scheme,model,dt,rmse,group_std_err,cpu_seconds,aborted_paths`.
//! Slope file: `scheme,model,slope,slope_stderr`. Floats carry 17
//! significant digits so a read/write cycle is lossless. Lines starting
//! with `#` are metadata comments and are preserved.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, SdeError};
use crate::harness::ConvergenceReport;

pub const ROWS_HEADER: &str = "scheme,model,dt,rmse,group_std_err,cpu_seconds,aborted_paths";
pub const SLOPES_HEADER: &str = "scheme,model,slope,slope_stderr";

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub scheme: String,
    pub model: String,
    pub dt: f64,
    pub rmse: f64,
    pub group_std_err: f64,
    pub cpu_seconds: f64,
    pub aborted_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportTable {
    /// Comment lines without the leading `# `.
    pub comments: Vec<String>,
    pub rows: Vec<CsvRow>,
}

/// 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl ReportTable {
    pub fn from_reports(reports: &[ConvergenceReport]) -> Self {
        let comments = reports
            .first()
            .map(|r| vec![format!("master_seed={} paths={} groups={}", r.master_seed, r.paths, r.groups)])
            .unwrap_or_default();
        let rows = reports
            .iter()
            .flat_map(|r| {
                r.rows.iter().map(|row| CsvRow {
                    scheme: r.scheme.to_string(),
                    model: r.model.clone(),
                    dt: row.dt,
                    rmse: row.rmse,
                    group_std_err: row.group_std_err,
                    cpu_seconds: row.cpu_seconds,
                    aborted_paths: row.aborted_paths,
                })
            })
            .collect();
        ReportTable { comments, rows }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str(ROWS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.scheme,
                r.model,
                format_float(r.dt),
                format_float(r.rmse),
                format_float(r.group_std_err),
                format_float(r.cpu_seconds),
                r.aborted_paths
            );
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| SdeError::Parse {
            path: origin.to_path_buf(),
            reason: format!("line {}: {reason}", line + 1),
        };
        let mut table = ReportTable::default();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            if let Some(c) = line.strip_prefix('#') {
                table.comments.push(c.strip_prefix(' ').unwrap_or(c).to_string());
                continue;
            }
            if !header_seen {
                if line != ROWS_HEADER {
                    return Err(err(i, format!("expected header '{ROWS_HEADER}'")));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(err(i, format!("expected 7 fields, got {}", fields.len())));
            }
            let float = |k: usize| fields[k].parse::<f64>().map_err(|e| err(i, format!("field {k}: {e}")));
            table.rows.push(CsvRow {
                scheme: fields[0].to_string(),
                model: fields[1].to_string(),
                dt: float(2)?,
                rmse: float(3)?,
                group_std_err: float(4)?,
                cpu_seconds: float(5)?,
                aborted_paths: fields[6].parse().map_err(|e| err(i, format!("field 6: {e}")))?,
            });
        }
        if !header_seen {
            return Err(err(0, "missing header".into()));
        }
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| SdeError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SdeError::io(path, e))?;
        Self::parse(&text, path)
    }
}

pub fn write_report(reports: &[ConvergenceReport], path: &Path) -> Result<()> {
    ReportTable::from_reports(reports).write(path)
}

pub fn render_slopes(reports: &[ConvergenceReport]) -> String {
    let mut out = String::new();
    if let Some(r) = reports.first() {
        let _ = writeln!(out, "# master_seed={} paths={} groups={}", r.master_seed, r.paths, r.groups);
    }
    out.push_str(SLOPES_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.scheme,
            r.model,
            format_float(r.slope),
            format_float(r.slope_stderr)
        );
    }
    out
}

pub fn write_slopes(reports: &[ConvergenceReport], path: &Path) -> Result<()> {
    fs::write(path, render_slopes(reports)).map_err(|e| SdeError::io(path, e))
}
