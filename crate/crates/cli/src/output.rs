//! Report tables (CSV plus an aligned text rendering) and the metadata
//! sidecar that keeps run-dependent fields out of the primary outputs.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::CliResult;

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: &str, headers: &[&str]) -> Table {
        Table {
            title: title.to_string(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, path: &Path) -> CliResult<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Columns padded to their widest cell; numbers shortened for reading.
    pub fn render(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|c| readable(c)).collect())
            .collect();
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &cells {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(out, "{}", self.title);
        }
        let line = |out: &mut String, row: &[String]| {
            let padded: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(&mut out, &self.headers);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule);
        for r in &cells {
            line(&mut out, r);
        }
        out
    }
}

fn readable(cell: &str) -> String {
    match cell.parse::<f64>() {
        Ok(v) if cell.contains('.') || cell.contains('e') => {
            if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e7) {
                format!("{v:.4e}")
            } else {
                format!("{v:.6}")
            }
        }
        _ => cell.to_string(),
    }
}

/// Full-precision, shortest round-trip rendering.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn prepare_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_text(path: &Path, tables: &[&Table], notes: &[String]) -> CliResult<()> {
    let mut s = String::new();
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        s.push_str(&t.render());
    }
    if !notes.is_empty() {
        s.push_str("\nNotes\n");
        for n in notes {
            let _ = writeln!(s, "  - {n}");
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    arguments: &'a [String],
    seed: Option<u64>,
    outputs: Vec<String>,
    unix_time: u64,
}

/// The only file of a run allowed to differ between identical invocations.
pub fn write_metadata(
    dir: &Path,
    command: &str,
    argv: &[String],
    seed: Option<u64>,
    outputs: &[&str],
) -> CliResult<()> {
    let unix_time = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = Metadata {
        command,
        version: env!("CARGO_PKG_VERSION"),
        arguments: argv.get(1..).unwrap_or(&[]),
        seed,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        unix_time,
    };
    write_json(&dir.join("metadata.json"), &meta)
}
