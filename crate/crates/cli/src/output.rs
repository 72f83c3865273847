//! CSV tables with parameter headers and the per-run JSON manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Parameters recorded in every CSV header and in the manifest.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunParams {
    pub model: String,
    pub input: String,
    pub gamma: Option<f64>,
    pub epsilon: Vec<f64>,
    pub lags: (i64, i64),
    pub grid: usize,
    pub seed: u64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub notes: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            notes: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, figure: &str, p: &RunParams) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# perturbmc {VERSION}");
        let _ = writeln!(out, "# figure: {figure}");
        let _ = writeln!(out, "# model: {}", p.model);
        let _ = writeln!(out, "# input: {}", p.input);
        if let Some(g) = p.gamma {
            let _ = writeln!(out, "# gamma: {g}");
        }
        let eps: Vec<String> = p.epsilon.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(out, "# epsilon: {}", eps.join(" "));
        let _ = writeln!(out, "# lags: {}:{}", p.lags.0, p.lags.1);
        let _ = writeln!(out, "# grid: {}", p.grid);
        let _ = writeln!(out, "# seed: {}", p.seed);
        let _ = writeln!(out, "# steps: {}", p.steps);
        for (k, v) in &self.notes {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.12e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    figure: &'a str,
    params: &'a RunParams,
    files: Vec<String>,
}

/// Writes each table as `<name>.csv` plus `<figure>.manifest.json`; returns the paths.
pub fn write_tables(dir: &Path, figure: &str, params: &RunParams, tables: &[Table]) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for t in tables {
        let path = dir.join(format!("{}.csv", t.name));
        fs::write(&path, t.to_csv(figure, params)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        paths.push(path);
    }
    let manifest = Manifest {
        tool: "perturbmc",
        version: VERSION,
        figure,
        params,
        files: tables.iter().map(|t| format!("{}.csv", t.name)).collect(),
    };
    let path = dir.join(format!("{figure}.manifest.json"));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    paths.push(path);
    Ok(paths)
}
