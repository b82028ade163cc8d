//! Experiment results and their CSV / manifest emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fluctuant_core::stats::{BoundRatio, MeanEstimate};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// A rectangular table of formatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("cells are UTF-8")
    }
}

/// Shortest round-trip formatting; empty for NaN.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:?}")
    }
}

/// One row of the verdict CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub experiment: String,
    pub grid_point: String,
    pub lhs: f64,
    pub lhs_ci_hi: f64,
    pub bound: f64,
    pub ratio: f64,
    pub fitted_c: f64,
    pub pass: bool,
}

impl Verdict {
    fn scalar(experiment: &str, point: impl Into<String>, value: f64, bound: f64, pass: bool) -> Self {
        Self {
            experiment: experiment.to_string(),
            grid_point: point.into(),
            lhs: value,
            lhs_ci_hi: f64::NAN,
            bound,
            ratio: value / bound,
            fitted_c: f64::NAN,
            pass,
        }
    }

    /// `|value/target − 1| ≤ tol`.
    pub fn relative(experiment: &str, point: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Self::scalar(experiment, point, value, target, (value / target - 1.0).abs() <= tol)
    }

    /// `|value − target| ≤ tol`.
    pub fn absolute(experiment: &str, point: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Self::scalar(experiment, point, value, target, (value - target).abs() <= tol)
    }

    pub fn at_least(experiment: &str, point: impl Into<String>, value: f64, floor: f64) -> Self {
        Self::scalar(experiment, point, value, floor, value >= floor)
    }

    pub fn at_most(experiment: &str, point: impl Into<String>, value: f64, ceiling: f64) -> Self {
        Self::scalar(experiment, point, value, ceiling, value <= ceiling)
    }

    /// A Monte Carlo estimate whose upper confidence limit must not exceed `bound`.
    pub fn ci_below(experiment: &str, point: impl Into<String>, est: &MeanEstimate, bound: f64) -> Self {
        Self {
            experiment: experiment.to_string(),
            grid_point: point.into(),
            lhs: est.mean,
            lhs_ci_hi: est.ci_hi,
            bound,
            ratio: est.mean / bound,
            fitted_c: f64::NAN,
            pass: est.ci_hi <= bound,
        }
    }

    pub fn flag(experiment: &str, point: impl Into<String>, pass: bool) -> Self {
        Self::scalar(experiment, point, f64::NAN, f64::NAN, pass)
    }

    /// One row per grid point plus a `spread` row; all share the overall verdict.
    pub fn from_ratio(experiment: &str, label: &str, br: &BoundRatio) -> Vec<Self> {
        let mut out: Vec<Self> = br
            .points
            .iter()
            .map(|p| Self {
                experiment: experiment.to_string(),
                grid_point: format!("{label}={}", num(p.grid)),
                lhs: p.lhs,
                lhs_ci_hi: p.lhs_ci_hi,
                bound: p.bound,
                ratio: p.ratio,
                fitted_c: br.fitted_c,
                pass: br.pass,
            })
            .collect();
        out.push(Self {
            experiment: experiment.to_string(),
            grid_point: format!("{label}:spread"),
            lhs: br.spread,
            lhs_ci_hi: f64::NAN,
            bound: fluctuant_core::stats::RATIO_SPREAD_LIMIT,
            ratio: br.spread / fluctuant_core::stats::RATIO_SPREAD_LIMIT,
            fitted_c: br.fitted_c,
            pass: br.pass,
        });
        out
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub experiment: String,
    pub raw: Table,
    pub summary: Table,
    pub verdicts: Vec<Verdict>,
    /// Named scalar results.
    pub values: BTreeMap<String, f64>,
    /// Named Monte Carlo estimates over a grid.
    pub series: BTreeMap<String, Vec<(f64, MeanEstimate)>>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            ..Default::default()
        }
    }

    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn set(&mut self, key: impl Into<String>, v: f64) {
        self.values.insert(key.into(), v);
    }

    pub fn verdict_table(&self) -> Table {
        let mut t = Table::new(&["experiment_id", "grid_point", "lhs", "lhs_ci_hi", "bound", "ratio", "fitted_c", "verdict"]);
        for v in &self.verdicts {
            t.push(vec![
                v.experiment.clone(),
                v.grid_point.clone(),
                num(v.lhs),
                num(v.lhs_ci_hi),
                num(v.bound),
                num(v.ratio),
                num(v.fitted_c),
                if v.pass { "PASS" } else { "FAIL" }.to_string(),
            ]);
        }
        t
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_sha256: String,
    pub seed: u64,
    pub code_version: String,
    pub wall_time_seconds: f64,
    pub workers: usize,
    pub verdict: String,
    /// File name → SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
    pub values: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `raw.csv`, `summary.csv`, `verdict.csv` and `manifest.json` into `dir`.
pub fn write_artifacts(dir: &Path, config: &ExperimentConfig, report: &Report, wall: f64) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = BTreeMap::new();
    for (name, table) in [
        ("raw.csv", &report.raw),
        ("summary.csv", &report.summary),
        ("verdict.csv", &report.verdict_table()),
    ] {
        let text = table.to_csv();
        files.insert(name.to_string(), sha256_hex(text.as_bytes()));
        fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))?;
    }
    let manifest = Manifest {
        experiment: report.experiment.clone(),
        config_sha256: sha256_hex(config.canonical().as_bytes()),
        seed: config.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: wall,
        workers: fluctuant_core::ensemble::worker_count(config.budget.workers),
        verdict: if report.pass() { "PASS" } else { "FAIL" }.to_string(),
        files,
        values: report.values.iter().filter(|(_, v)| v.is_finite()).map(|(k, v)| (k.clone(), *v)).collect(),
        notes: report.notes.clone(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).context("writing manifest.json")?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fluctuant_core::stats::bound_ratio;

    #[test]
    fn csv_quotes_and_formats() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x,y".into(), num(0.1)]);
        t.push(vec![num(f64::NAN), num(2.0)]);
        assert_eq!(t.to_csv(), "a,b\n\"x,y\",0.1\n,2.0\n");
    }

    #[test]
    fn ratio_rows() {
        let est = |m: f64| MeanEstimate {
            count: 100,
            mean: m,
            stderr: 0.0,
            ci_lo: m,
            ci_hi: m,
        };
        let br = bound_ratio(&[1.0, 10.0, 100.0], &[est(2.0), est(20.0), est(200.0)], |g| g).unwrap();
        let rows = Verdict::from_ratio("x", "ell", &br);
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.pass && r.fitted_c == 2.0));
        assert_eq!(rows[3].grid_point, "ell:spread");
    }
}
