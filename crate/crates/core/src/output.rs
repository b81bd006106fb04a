//! CSV tables, report files and the JSON sidecar.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::bounds::{BoundKind, BoundReport};
use crate::error::Result;

/// Formats a float deterministically: plain decimal in a readable range,
/// scientific notation outside it.
pub fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// A named CSV table with string cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|&x| fmt_num(x)).collect());
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    /// Column `name` parsed as floats.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r[i].parse().ok()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv_writer(w);
        wr.write_record(&self.header)?;
        for r in &self.rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn kind_name(k: BoundKind) -> &'static str {
    match k {
        BoundKind::Upper => "upper",
        BoundKind::Lower => "lower",
        BoundKind::Within => "within",
    }
}

pub const REPORT_HEADER: [&str; 8] = [
    "name",
    "kind",
    "theoretical",
    "empirical",
    "stderr",
    "slack",
    "satisfied",
    "metadata",
];

pub fn write_reports_csv<W: Write>(reports: &[BoundReport], w: W) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(REPORT_HEADER)?;
    for r in reports {
        wr.write_record([
            r.name.clone(),
            kind_name(r.kind).to_string(),
            fmt_num(r.theoretical),
            fmt_num(r.empirical),
            fmt_num(r.stderr),
            fmt_num(r.slack),
            r.satisfied.to_string(),
            serde_json::to_string(&r.metadata)?,
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
