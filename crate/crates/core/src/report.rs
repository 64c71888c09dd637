//! CSV tables. Floats are written as decimal text with 9 significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::train::csv_error;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Decimal text with 9 significant digits; exponent form outside 1e-6..1e15.
pub fn format_float(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "NaN".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    // Round first so the exponent reflects the rounded value (9.9999999996 -> 10.0000000).
    let rounded: f64 = format!("{v:.8e}").parse().expect("valid float text");
    let exp = rounded.abs().log10().floor() as i32;
    if !(-6..15).contains(&exp) {
        return format!("{v:.8e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let s = format!("{rounded:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

impl Cell {
    pub fn text(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) => format_float(*f),
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem of the CSV.
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, headers: &[&str]) -> Self {
        Self { name: name.into(), headers: headers.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.headers.len() {
            return Err(Error::arg(format!(
                "table {} has {} columns, row has {}",
                self.name,
                self.headers.len(),
                row.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(&self.headers).map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::text)).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Column by header name.
    pub fn column(&self, header: &str) -> Option<Vec<&Cell>> {
        let i = self.headers.iter().position(|h| h == header)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }
}

/// Writes one `<name>.csv` per table into `out_dir` and returns the paths.
/// An empty list writes nothing, not even the directory.
pub fn emit_report(tables: &[Table], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if tables.is_empty() {
        return Ok(Vec::new());
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    tables
        .iter()
        .map(|t| {
            let p = out_dir.join(format!("{}.csv", t.name));
            t.write_csv(&p)?;
            Ok(p)
        })
        .collect()
}
