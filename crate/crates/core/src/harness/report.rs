//! Delimited result tables and JSON run summaries.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(usize),
    /// Rendered with four decimals.
    Num(f64),
    Flag(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) if v.is_nan() => "nan".into(),
            Cell::Num(v) => format!("{v:.4}"),
            Cell::Flag(b) => b.to_string(),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Flag(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File-name friendly identifier.
    pub name: String,
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, title: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_delimited(&self, sep: char) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self.columns.iter().map(String::as_str).collect();
        let _ = writeln!(out, "{}", header.join(&sep.to_string()));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            let _ = writeln!(out, "{}", cells.join(&sep.to_string()));
        }
        out
    }

    /// Column-aligned rendering for terminals.
    pub fn to_pretty(&self) -> String {
        let rendered: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|c| rendered.iter().map(|r| r[c].len()).chain([self.columns[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: Vec<&str>| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
        };
        let mut out = format!("{}\n", self.title);
        let _ = writeln!(out, "{}", line(self.columns.iter().map(String::as_str).collect()));
        for r in &rendered {
            let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub name: String,
    pub tables: Vec<Table>,
    pub summary: serde_json::Value,
}

impl Report {
    pub fn new(name: &str, summary: impl Serialize) -> Result<Self> {
        Ok(Self { name: name.into(), tables: Vec::new(), summary: serde_json::to_value(summary)? })
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn to_pretty(&self) -> String {
        self.tables.iter().map(Table::to_pretty).collect::<Vec<_>>().join("\n")
    }

    /// Writes `<name>_<table>.csv` per table plus `<name>_summary.json`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for t in &self.tables {
            let path = dir.join(format!("{}_{}.csv", self.name, t.name));
            std::fs::write(&path, t.to_delimited(','))?;
            written.push(path);
        }
        let path = dir.join(format!("{}_summary.json", self.name));
        std::fs::write(&path, serde_json::to_string_pretty(&self.summary)? + "\n")?;
        written.push(path);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_decimal_cells() {
        let mut t = Table::new("t", "Title", &["station", "res", "ok"]);
        t.push(vec!["A".into(), 0.123456.into(), true.into()]);
        t.push(vec!["B".into(), f64::NAN.into(), false.into()]);
        assert_eq!(t.to_delimited(','), "station,res,ok\nA,0.1235,true\nB,nan,false\n");
        assert!(t.to_pretty().starts_with("Title\n"));
    }
}
