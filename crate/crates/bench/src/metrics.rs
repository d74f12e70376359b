use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bng_core::regret::BoundReport;

use crate::error::{BenchError, Result};

pub const CSV_HEADER: &str = "epoch,train_loss,test_loss,train_acc,test_acc,wall_seconds,gnorm_min,gnorm_mean,gnorm_max";
pub const WALL_COLUMN: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: u64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wall_seconds: f64,
    /// Min/mean/max over blocks of each block's mean raw gradient norm.
    pub gnorm_min: f64,
    pub gnorm_mean: f64,
    pub gnorm_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    /// Set when a non-finite value halted the run.
    pub diverged: Option<String>,
    /// Convex tasks only.
    pub bound: Option<BoundReport>,
}

impl MetricsTable {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let cells = [
                r.train_loss,
                r.test_loss,
                r.train_acc,
                r.test_acc,
                r.wall_seconds,
                r.gnorm_min,
                r.gnorm_mean,
                r.gnorm_max,
            ];
            write!(s, "{}", r.epoch).unwrap();
            for c in cells {
                write!(s, ",{}", fmt_g9(c)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// C's `%.9g`: 9 significant digits, trailing zeros dropped, exponent form
/// outside `1e-4 ≤ |x| < 1e9`.
pub fn fmt_g9(x: f64) -> String {
    const P: i32 = 9;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // The exponent after rounding to P digits decides the style.
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (P - 1 - exp) as usize, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_metrics_csv(table: &MetricsTable, path: &Path) -> Result<()> {
    if table.rows.is_empty() {
        return Err(BenchError::Invalid(format!(
            "refusing to write an empty metrics table to {}",
            path.display()
        )));
    }
    fs::write(path, table.to_csv()).map_err(|e| BenchError::io(path, e))
}

/// The CSV with the wall-clock column removed, for run-to-run comparisons.
pub fn strip_wall_seconds(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != WALL_COLUMN)
                .map(|(_, c)| c)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
