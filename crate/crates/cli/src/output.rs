//! CSV tables with JSON sidecars, and plain JSON documents.
//!
//! Floating-point cells use `{:.16e}`, i.e. 17 significant digits, so every
//! value reads back bit-for-bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Mode};
use crate::error::{CliError, Result};

/// Default output directory when neither the config nor `--output-dir` names one.
pub const OUTPUT_DIR_ENV: &str = "SPINPROBE_OUTPUT_DIR";
pub const FALLBACK_OUTPUT_DIR: &str = "spinprobe-output";

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Uint(u64),
    Bool(bool),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) => format_float(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Uint(u) => u.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Uint(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Uint(x as u64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(x: Option<T>) -> Self {
        x.map_or(Cell::Empty, Into::into)
    }
}

pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// `--output-dir` / config value, then the environment variable, then the fallback.
pub fn resolve_output_dir(config: &ExperimentConfig) -> PathBuf {
    config
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUTPUT_DIR))
}

/// Writer bound to one output directory and one resolved configuration.
pub struct OutputDir {
    path: PathBuf,
    metadata: Value,
    written: Vec<PathBuf>,
}

impl OutputDir {
    /// Creates the directory and checks that it is writable.
    pub fn create(path: &Path, mode: Mode, config: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        let probe = path.join(".spinprobe-write-check");
        fs::write(&probe, b"").map_err(|e| CliError::io(&probe, e))?;
        fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            metadata: json!({
                "tool": "spinprobe",
                "version": env!("CARGO_PKG_VERSION"),
                "mode": mode.name(),
                "seed": config.seed,
                "config": config,
            }),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes `name.csv` and its sidecar `name.json`.
    pub fn write_table(&mut self, name: &str, columns: &[&str], rows: &[Vec<Cell>]) -> Result<PathBuf> {
        let csv_path = self.path.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(columns)?;
        for row in rows {
            if row.len() != columns.len() {
                return Err(CliError::Config(format!(
                    "row of {} cells for {} columns in {name}",
                    row.len(),
                    columns.len()
                )));
            }
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush().map_err(|e| CliError::io(&csv_path, e))?;
        self.written.push(csv_path.clone());

        let mut sidecar = self.metadata.clone();
        sidecar["table"] = json!(format!("{name}.csv"));
        sidecar["columns"] = json!(columns);
        sidecar["rows"] = json!(rows.len());
        self.write_raw_json(&format!("{name}.json"), &sidecar)?;
        Ok(csv_path)
    }

    /// Writes `name.json` with the run metadata and `body` under `"data"`.
    pub fn write_json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<PathBuf> {
        let mut doc = self.metadata.clone();
        doc["data"] = serde_json::to_value(body)?;
        self.write_raw_json(&format!("{name}.json"), &doc)
    }

    fn write_raw_json(&mut self, file: &str, value: &Value) -> Result<PathBuf> {
        let path = self.path.join(file);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }
}
