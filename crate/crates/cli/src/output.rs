//! CSV tables with a metadata comment block.
//!
//! Floats are written in the shortest form that parses back to the same
//! `f64`, so identical computations give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

/// Shortest round-trip representation; `{:?}` switches to exponent form for
/// very large and very small magnitudes.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

fn write_cell(out: &mut String, cell: &Cell) {
    match cell {
        Cell::Float(v) => out.push_str(&format_float(*v)),
        Cell::Int(v) => {
            let _ = write!(out, "{v}");
        }
        Cell::Text(s) => {
            if s.contains([',', '"', '\n']) {
                out.push('"');
                out.push_str(&s.replace('"', "\"\""));
                out.push('"');
            } else {
                out.push_str(s);
            }
        }
        Cell::Empty => {}
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Extra `key: value` lines for the comment block.
    pub notes: Vec<(String, String)>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Renders the table with `metadata` lines first, then the notes.
    pub fn to_csv(&self, metadata: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in metadata.iter().chain(&self.notes) {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_cell(&mut out, cell);
            }
            out.push('\n');
        }
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `<dir>/<command>_<first 12 hex digits of hash>.<ext>`.
pub fn output_path(dir: &Path, command: &str, hash: &str, ext: &str) -> PathBuf {
    dir.join(format!("{command}_{}.{ext}", &hash[..12]))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// A parsed CSV produced by [`Table::to_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCsv {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ParsedCsv {
    /// Reads the simple dialect written here (no quoted commas in numeric
    /// tables).
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut metadata = Vec::new();
        let mut lines = text.lines();
        let header = loop {
            match lines.next() {
                Some(l) if l.starts_with('#') => {
                    let body = l.trim_start_matches('#').trim();
                    if let Some((k, v)) = body.split_once(": ") {
                        metadata.push((k.to_string(), v.to_string()));
                    }
                }
                Some(l) => break l,
                None => return Err(CliError::Io("CSV has no header row".into())),
            }
        };
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect();
        Ok(Self {
            metadata,
            columns,
            rows,
        })
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn index(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }

    /// Values of a numeric column; empty cells become `None`.
    pub fn floats(&self, column: &str) -> Option<Vec<Option<f64>>> {
        let i = self.index(column)?;
        Some(self.rows.iter().map(|r| r[i].parse().ok()).collect())
    }

    /// Rows whose `column` equals `value`.
    pub fn filter(&self, column: &str, value: &str) -> Vec<&Vec<String>> {
        match self.index(column) {
            Some(i) => self.rows.iter().filter(|r| r[i] == value).collect(),
            None => Vec::new(),
        }
    }
}
