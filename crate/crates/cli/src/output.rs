//! Rendering of command results as aligned text, JSON or CSV.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::args::Format;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    /// CSV form: reals with 12 significant digits.
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => format!("{x:.11e}"),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn text(&self) -> String {
        match self {
            Cell::Num(x) => fmt_num(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as u64)
    }
}

impl From<u64> for Cell {
    fn from(i: u64) -> Self {
        Cell::Int(i)
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

pub fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e6).contains(&a) {
        format!("{x:.6}")
    } else {
        format!("{x:.3e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&str]) -> Self {
        Table {
            name,
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| CliError::internal(format!("csv: {e}"));
        w.write_record(&self.header).map_err(fail)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::internal(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| CliError::internal(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::text).collect()).collect();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, items: Vec<&str>| {
            let padded: Vec<String> = items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}", w = *w))
                .collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(&mut out, self.header.iter().map(String::as_str).collect());
        for row in &cells {
            line(&mut out, row.iter().map(String::as_str).collect());
        }
        out
    }
}

/// A command's result in all three formats.
#[derive(Debug, Clone)]
pub struct Output {
    pub json: serde_json::Value,
    pub text: String,
    pub csv: Vec<Table>,
    pub code: u8,
}

impl Output {
    pub fn new(json: &impl Serialize, text: String, csv: Vec<Table>, code: u8) -> Result<Self, CliError> {
        let json = serde_json::to_value(json).map_err(|e| CliError::internal(format!("json: {e}")))?;
        Ok(Output { json, text, csv, code })
    }

    pub fn render(&self, format: Format) -> Result<String, CliError> {
        match format {
            Format::Table => Ok(self.text.clone()),
            Format::Json => serde_json::to_string_pretty(&self.json)
                .map(|s| s + "\n")
                .map_err(|e| CliError::internal(format!("json: {e}"))),
            Format::Csv => {
                let parts = self.csv.iter().map(Table::to_csv).collect::<Result<Vec<_>, _>>()?;
                Ok(parts.join("\n"))
            }
        }
    }

    /// Writes every CSV table to `dir/<name>.csv`.
    pub fn write_csv_dir(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        for table in &self.csv {
            std::fs::write(dir.join(format!("{}.csv", table.name)), table.to_csv()?)?;
        }
        Ok(())
    }
}

/// `key: value` lines with aligned values.
pub fn key_values(pairs: &[(&str, String)]) -> String {
    let width = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{:<width$}  {v}", format!("{k}:"), width = width + 1);
    }
    out
}
