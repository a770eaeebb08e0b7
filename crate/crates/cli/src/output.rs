//! Tabular datasets: CSV with '#' metadata lines, or JSON records.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Self::I(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Self::I(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::S(v.to_owned())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        Self::F(v.unwrap_or(f64::NAN))
    }
}

/// 17 significant digits, so every f64 round-trips.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Self::F(v) => format_float(*v),
            Self::I(v) => v.to_string(),
            Self::S(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Self::F(v) if v.is_finite() => json!(v),
            Self::F(_) => Value::Null,
            Self::I(v) => json!(v),
            Self::S(s) => json!(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub name: String,
    /// Metadata lines, without the leading '#'.
    pub meta: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), ..Default::default() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.meta.push(line.into());
    }
}

/// Writes `ds` to `path`; `.json` gives records, anything else CSV.
pub fn emit_dataset(ds: &Dataset, path: &Path) -> Result<(), CliError> {
    let io = |e: &dyn std::fmt::Display| CliError::Io(format!("{}: {e}", path.display()));
    if let Some(bad) = ds.rows.iter().position(|r| r.len() != ds.columns.len()) {
        return Err(CliError::Internal(format!(
            "dataset {}: row {bad} has {} cells for {} columns",
            ds.name,
            ds.rows[bad].len(),
            ds.columns.len()
        )));
    }
    let bytes = if path.extension().is_some_and(|e| e == "json") {
        let rows: Vec<Value> = ds
            .rows
            .iter()
            .map(|r| Value::Object(ds.columns.iter().cloned().zip(r.iter().map(Cell::json)).collect::<Map<_, _>>()))
            .collect();
        let doc = json!({ "name": ds.name, "metadata": ds.meta, "columns": ds.columns, "rows": rows });
        let mut s = serde_json::to_string_pretty(&doc).map_err(|e| io(&e))?;
        s.push('\n');
        s.into_bytes()
    } else {
        let mut out = Vec::new();
        for line in &ds.meta {
            for l in line.lines() {
                out.extend_from_slice(b"# ");
                out.extend_from_slice(l.as_bytes());
                out.push(b'\n');
            }
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(&ds.columns).map_err(|e| io(&e))?;
        for r in &ds.rows {
            w.write_record(r.iter().map(Cell::text)).map_err(|e| io(&e))?;
        }
        w.into_inner().map_err(|e| io(&e))?
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io(&e))?;
    }
    fs::write(path, bytes).map_err(|e| io(&e))
}
