//! Per-round metrics and their CSV form.
//!
//! Column order is fixed:
//! `round,train_loss,test_accuracy,aggregate_grad_norm,suboptimality_gap,elapsed`.
//! Absent optional values are written as empty fields. Reals use Rust's
//! shortest round-trip formatting, so parsing an emitted file reproduces the
//! table bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "round,train_loss,test_accuracy,aggregate_grad_norm,suboptimality_gap,elapsed";

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// Number of completed rounds when the metrics were taken.
    pub round: usize,
    pub train_loss: f64,
    /// Held-out accuracy; `None` for tasks without labels (quadratic).
    pub test_accuracy: Option<f64>,
    /// `||G_t||` of the aggregate used in the round.
    pub aggregate_grad_norm: f64,
    /// `F(theta) - F(theta*)`, only for tasks with a known minimizer.
    pub suboptimality_gap: Option<f64>,
    /// Wall-clock seconds since the start of the run (0 when timing is off).
    pub elapsed: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<RoundMetrics>,
}

impl MetricsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: RoundMetrics) {
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&RoundMetrics> {
        self.rows.last()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.round,
                r.train_loss,
                opt(r.test_accuracy),
                r.aggregate_grad_norm,
                opt(r.suboptimality_gap),
                r.elapsed
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => return Err(Error::parse(1, "missing or unexpected metrics header")),
        }
        let mut table = MetricsTable::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::parse(
                    line_no,
                    format!("expected 6 fields, found {}", fields.len()),
                ));
            }
            let real = |s: &str, name: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("bad {name}: {s:?}")))
            };
            let optional = |s: &str, name: &str| -> Result<Option<f64>> {
                if s.trim().is_empty() {
                    Ok(None)
                } else {
                    real(s, name).map(Some)
                }
            };
            table.push(RoundMetrics {
                round: fields[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("bad round: {:?}", fields[0])))?,
                train_loss: real(fields[1], "train_loss")?,
                test_accuracy: optional(fields[2], "test_accuracy")?,
                aggregate_grad_norm: real(fields[3], "aggregate_grad_norm")?,
                suboptimality_gap: optional(fields[4], "suboptimality_gap")?,
                elapsed: real(fields[5], "elapsed")?,
            });
        }
        Ok(table)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `table` as CSV to `path`.
pub fn emit_metrics(table: &MetricsTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, table.to_csv()).map_err(|e| Error::file(path, e))
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<MetricsTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    MetricsTable::from_csv(&text)
}
