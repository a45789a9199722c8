//! Command output: named scalars plus tables, written either as one CSV file
//! per table (scalars go to `summary.csv`) or as a single JSON document.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::SCHEMA_VERSION;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Missing,
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

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
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
        v.map_or(Cell::Missing, Into::into)
    }
}

impl Cell {
    /// 17 significant digits, so that values round-trip.
    fn csv(&self) -> String {
        match self {
            Cell::Float(v) if v.is_finite() => format!("{v:.16e}"),
            Cell::Float(v) => v.to_string(),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Float(v) if v.is_finite() => json!(v),
            Cell::Float(_) | Cell::Missing => Value::Null,
            Cell::Int(v) => json!(v),
            Cell::Text(s) => json!(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width of table {}", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Cell::csv).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub command: String,
    pub seed: u64,
    pub scalars: Vec<(String, Cell)>,
    pub tables: Vec<Table>,
    /// Warnings and per-item failures that did not abort the run.
    pub messages: Vec<String>,
}

impl Report {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            seed,
            scalars: Vec::new(),
            tables: Vec::new(),
            messages: Vec::new(),
        }
    }

    pub fn scalar(&mut self, name: &str, value: impl Into<Cell>) {
        self.scalars.push((name.to_string(), value.into()));
    }

    pub fn get(&self, name: &str) -> Option<&Cell> {
        self.scalars.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new("summary", &["quantity", "value"]);
        for (k, v) in &self.scalars {
            t.push(vec![Cell::Text(k.clone()), v.clone()]);
        }
        t
    }

    pub fn to_json(&self) -> Value {
        let mut summary = Map::new();
        for (k, v) in &self.scalars {
            summary.insert(k.clone(), v.json());
        }
        let mut tables = Map::new();
        for t in &self.tables {
            let rows: Vec<Value> = t
                .rows
                .iter()
                .map(|r| Value::Object(t.columns.iter().cloned().zip(r.iter().map(Cell::json)).collect()))
                .collect();
            tables.insert(t.name.clone(), Value::Array(rows));
        }
        json!({
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "seed": self.seed,
            "summary": summary,
            "tables": tables,
            "messages": self.messages,
        })
    }

    /// Text for stdout when no output directory is given.
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(&self.to_json()).expect("report serializes") + "\n",
            Format::Csv => {
                let mut out = String::new();
                for t in std::iter::once(self.summary_table()).chain(self.tables.iter().cloned()) {
                    let _ = writeln!(out, "# {}", t.name);
                    out.push_str(&t.to_csv());
                    out.push('\n');
                }
                for m in &self.messages {
                    let _ = writeln!(out, "# note: {m}");
                }
                out
            }
        }
    }

    /// Writes the report below `dir` and returns the created files.
    pub fn write(&self, dir: &Path, format: Format) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        match format {
            Format::Json => {
                let p = dir.join(format!("{}.json", self.command));
                fs::write(&p, self.render(Format::Json))?;
                files.push(p);
            }
            Format::Csv => {
                for t in std::iter::once(self.summary_table()).chain(self.tables.iter().cloned()) {
                    let p = dir.join(format!("{}.csv", t.name));
                    fs::write(&p, t.to_csv())?;
                    files.push(p);
                }
                if !self.messages.is_empty() {
                    let p = dir.join("messages.txt");
                    fs::write(&p, self.messages.join("\n") + "\n")?;
                    files.push(p);
                }
            }
        }
        Ok(files)
    }
}
