//! Report tables: tab-separated values with a schema header line.
//!
//! Every report file starts with `#hamlearn-table v1 <kind>`, then a
//! header row naming the columns, then one row per line. Floats are
//! rendered in exponent notation with enough digits to round-trip
//! bit-exactly, so identical runs produce identical bytes and parsing
//! a table back recovers the original values.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::analysis::{CorrelationReport, ErrorStats, SweepPoint};
use crate::multistage::StageReport;

const SCHEMA_TAG: &str = "#hamlearn-table";
const SCHEMA_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum TableError {
    #[error("table kind and column names must be non-empty and free of whitespace, got {0:?}")]
    BadToken(String),
    #[error("a table needs at least one column")]
    NoColumns,
    #[error("row has {got} cells, table has {expected} columns")]
    ArityMismatch { expected: usize, got: usize },
    #[error("text cell {0:?} contains a tab or newline")]
    BadCell(String),
    #[error("malformed table: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One table cell. Integers and floats render distinctly (floats
/// always carry an exponent), so a parsed table regains the same cell
/// types it was written with.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    Float(f64),
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    fn render(&self, out: &mut String) {
        match self {
            Cell::Text(s) => out.push_str(s),
            Cell::Int(v) => {
                let _ = write!(out, "{v}");
            }
            Cell::Float(v) => {
                let _ = write!(out, "{v:e}");
            }
        }
    }

    fn parse(token: &str) -> Cell {
        if let Ok(v) = token.parse::<i64>() {
            return Cell::Int(v);
        }
        if let Ok(v) = token.parse::<f64>() {
            return Cell::Float(v);
        }
        Cell::Text(token.to_string())
    }
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    kind: String,
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(kind: impl Into<String>, columns: &[&str]) -> Result<Self, TableError> {
        let kind = kind.into();
        if !valid_token(&kind) {
            return Err(TableError::BadToken(kind));
        }
        if columns.is_empty() {
            return Err(TableError::NoColumns);
        }
        for c in columns {
            if !valid_token(c) {
                return Err(TableError::BadToken((*c).to_string()));
            }
        }
        Ok(Table {
            kind,
            columns: columns.iter().map(|c| (*c).to_string()).collect(),
            rows: Vec::new(),
        })
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn push_row(&mut self, row: Vec<Cell>) -> Result<(), TableError> {
        if row.len() != self.columns.len() {
            return Err(TableError::ArityMismatch {
                expected: self.columns.len(),
                got: row.len(),
            });
        }
        for cell in &row {
            if let Cell::Text(s) = cell {
                if s.contains('\t') || s.contains('\n') {
                    return Err(TableError::BadCell(s.clone()));
                }
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Full file contents, newline-terminated.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{SCHEMA_TAG} {SCHEMA_VERSION} {}", self.kind);
        out.push_str(&self.columns.join("\t"));
        out.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push('\t');
                }
                cell.render(&mut out);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(self.render().as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        Ok(std::fs::write(path, self.render())?)
    }

    pub fn parse(text: &str) -> Result<Table, TableError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| TableError::Malformed("empty input".into()))?;
        let mut parts = header.split(' ');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(SCHEMA_TAG), Some(SCHEMA_VERSION), Some(kind), None) => {
                let columns_line = lines
                    .next()
                    .ok_or_else(|| TableError::Malformed("missing column row".into()))?;
                let columns: Vec<&str> = columns_line.split('\t').collect();
                let mut table = Table::new(kind, &columns)?;
                for line in lines {
                    let row = line.split('\t').map(Cell::parse).collect();
                    table.push_row(row)?;
                }
                Ok(table)
            }
            (Some(SCHEMA_TAG), Some(v), Some(_), None) => Err(TableError::Malformed(format!(
                "unsupported schema version {v:?}"
            ))),
            _ => Err(TableError::Malformed(format!("bad header line {header:?}"))),
        }
    }
}

/// Per-epoch training losses across all stages: one row per epoch.
pub fn loss_table(reports: &[StageReport]) -> Table {
    let mut t = Table::new(
        "loss_history",
        &["stage", "epoch", "train_loss", "val_loss"],
    )
    .expect("static schema");
    for report in reports {
        for rec in &report.history {
            t.push_row(vec![
                Cell::Int(report.stage as i64),
                Cell::Int(rec.epoch as i64),
                Cell::Float(rec.train_loss),
                Cell::Float(rec.val_loss),
            ])
            .expect("static arity");
        }
    }
    t
}

/// One row per kept stage: selection epoch, the normalization factors
/// and the composed predictor's fidelities.
pub fn stage_summary_table(reports: &[StageReport]) -> Table {
    let mut t = Table::new(
        "stage_summary",
        &[
            "stage",
            "best_epoch",
            "epsilon_used",
            "epsilon_next",
            "train_fidelity",
            "val_fidelity",
        ],
    )
    .expect("static schema");
    for report in reports {
        t.push_row(vec![
            Cell::Int(report.stage as i64),
            Cell::Int(report.best_epoch as i64),
            Cell::Float(report.epsilon_used),
            Cell::Float(report.epsilon_next),
            Cell::Float(report.train_fidelity),
            Cell::Float(report.val_fidelity),
        ])
        .expect("static arity");
    }
    t
}

/// Per-coefficient error means and standard deviations, one block of
/// rows per stage cutoff.
pub fn error_stats_table(stats: &[ErrorStats], labels: &[String]) -> Table {
    let mut t =
        Table::new("param_errors", &["stage", "param", "mean", "std"]).expect("static schema");
    for s in stats {
        for (p, label) in labels.iter().enumerate() {
            t.push_row(vec![
                Cell::Int(s.stage_cutoff as i64),
                Cell::text(label.clone()),
                Cell::Float(s.mean[p]),
                Cell::Float(s.std[p]),
            ])
            .expect("static arity");
        }
    }
    t
}

/// Max-correlation scan results, one row per stage.
pub fn correlation_table(report: &CorrelationReport) -> Table {
    let mut t =
        Table::new("correlation", &["stage", "max_abs_pcc", "max_mi"]).expect("static schema");
    for row in &report.rows {
        t.push_row(vec![
            Cell::Int(row.stage as i64),
            Cell::Float(row.max_abs_pcc),
            Cell::Float(row.max_mi),
        ])
        .expect("static arity");
    }
    t
}

/// Sampling-grid sweep results, one row per (grid point, stage).
pub fn sweep_table(points: &[SweepPoint]) -> Table {
    let mut t = Table::new(
        "sweep",
        &[
            "tau",
            "n_steps",
            "stage",
            "train_infidelity",
            "val_infidelity",
        ],
    )
    .expect("static schema");
    for p in points {
        t.push_row(vec![
            Cell::Float(p.tau),
            Cell::Int(p.n_steps as i64),
            Cell::Int(p.stage as i64),
            Cell::Float(p.train_infidelity),
            Cell::Float(p.val_infidelity),
        ])
        .expect("static arity");
    }
    t
}
