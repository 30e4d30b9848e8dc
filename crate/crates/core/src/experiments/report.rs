//! Report bundles, CSV rendering and artifact hashing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{LabError, Result};
use crate::theory::{CeKl, EckartYoungReport, GapReport, TailReport};

pub const SCHEMA_VERSION: u32 = 1;

/// One sweep curve: a row per grid point, the first column is the swept value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub x: String,
    pub columns: Vec<String>,
    /// Non-finite cells serialize as the strings `nan`, `inf` and `-inf`.
    #[serde(with = "cells")]
    pub rows: Vec<Vec<f64>>,
}

mod cells {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Cell {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(rows: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let cells: Vec<Vec<Cell>> = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&v| {
                        if v.is_finite() {
                            Cell::Number(v)
                        } else {
                            Cell::Text(super::format_sig9(v))
                        }
                    })
                    .collect()
            })
            .collect();
        cells.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let cells: Vec<Vec<Cell>> = Vec::deserialize(d)?;
        cells
            .into_iter()
            .map(|r| {
                r.into_iter()
                    .map(|c| match c {
                        Cell::Number(v) => Ok(v),
                        Cell::Text(t) => match t.as_str() {
                            "nan" => Ok(f64::NAN),
                            "inf" => Ok(f64::INFINITY),
                            "-inf" => Ok(f64::NEG_INFINITY),
                            other => Err(serde::de::Error::custom(format!("bad cell `{other}`"))),
                        },
                    })
                    .collect()
            })
            .collect()
    }
}

impl Table {
    pub fn new(name: impl Into<String>, x: impl Into<String>, columns: Vec<String>) -> Self {
        Table {
            name: name.into(),
            x: x.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, x: f64, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(LabError::Invariant(format!(
                "table {}: row of {} values for {} columns",
                self.name,
                values.len(),
                self.columns.len()
            )));
        }
        let mut row = Vec::with_capacity(values.len() + 1);
        row.push(x);
        row.extend(values);
        self.rows.push(row);
        Ok(())
    }

    /// Values of `column` in row order.
    pub fn column(&self, column: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == column)? + 1;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn xs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.x);
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&v| format_sig9(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Named pass/fail outcome recorded alongside the numbers that decided it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    /// `reproduction`, or `analog` when the protocol is a structural stand-in.
    pub label: String,
    pub config: RunConfig,
    pub tables: Vec<Table>,
    pub gap_reports: Vec<GapReport>,
    pub tail_reports: Vec<TailReport>,
    pub eckart_young: Vec<EckartYoungReport>,
    pub ce_kl: Vec<CeKl>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    /// Wall-clock seconds per phase; excluded from determinism comparisons.
    pub timings: BTreeMap<String, f64>,
    /// SHA-256 of every emitted CSV, keyed by file name.
    pub artifacts: BTreeMap<String, String>,
}

impl ReportBundle {
    pub fn new(config: RunConfig) -> Self {
        ReportBundle {
            schema_version: SCHEMA_VERSION,
            label: "reproduction".into(),
            config,
            tables: Vec::new(),
            gap_reports: Vec::new(),
            tail_reports: Vec::new(),
            eckart_young: Vec::new(),
            ce_kl: Vec::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
            timings: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Renders like C's `%.9g`.
pub fn format_sig9(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{v:.*}", (8 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes one `<table>.csv` per table and `report.json`; returns the written paths.
pub fn emit_report(bundle: &mut ReportBundle, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut written = Vec::new();
    bundle.artifacts.clear();
    for table in &bundle.tables {
        let name = format!("{}.csv", table.name);
        let path = dir.join(&name);
        let csv = table.to_csv();
        fs::write(&path, &csv).map_err(|e| LabError::io(&path, e))?;
        bundle.artifacts.insert(name, sha256_hex(csv.as_bytes()));
        written.push(path);
    }
    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(bundle)?;
    fs::write(&path, json + "\n").map_err(|e| LabError::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Reads a bundle written by [`emit_report`].
pub fn load_report(path: impl AsRef<Path>) -> Result<ReportBundle> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
