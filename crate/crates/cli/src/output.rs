//! Result records, `summary.json`, `detail.csv` and plot-ready text files.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::error::CliError;

pub const PRESSURE_UNITS: &str = "nats per site";
pub const DIMENSIONLESS: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub run_id: String,
    pub config_hash: String,
    pub quantity: String,
    pub value: f64,
    /// `None` for exact values.
    pub error: Option<f64>,
    pub units: &'static str,
    /// Seconds since the Unix epoch; only set on request so that output
    /// stays reproducible by default.
    pub timestamp: Option<u64>,
}

/// Collects named results for one run.
#[derive(Debug, Clone)]
pub struct Recorder {
    pub run_id: String,
    pub config_hash: String,
    pub timestamp: Option<u64>,
    pub records: Vec<ResultRecord>,
    /// Non-numeric facts (engine names, flags) for the summary.
    pub notes: Map<String, Value>,
}

impl Recorder {
    pub fn new(subcommand: &str, config_hash: &str, timestamp: Option<u64>) -> Self {
        Self {
            run_id: format!("{subcommand}-{}", &config_hash[..16]),
            config_hash: config_hash.to_string(),
            timestamp,
            records: Vec::new(),
            notes: Map::new(),
        }
    }

    pub fn push(&mut self, quantity: impl Into<String>, value: f64, error: Option<f64>, units: &'static str) {
        self.records.push(ResultRecord {
            run_id: self.run_id.clone(),
            config_hash: self.config_hash.clone(),
            quantity: quantity.into(),
            value,
            error,
            units,
            timestamp: self.timestamp,
        });
    }

    pub fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.notes.insert(key.to_string(), value.into());
    }

    pub fn summary(&self, subcommand: &str, canonical: &crate::config::Table) -> Value {
        let results: Vec<Value> = self
            .records
            .iter()
            .map(|r| {
                json!({
                    "quantity": r.quantity,
                    "value": finite_or_null(r.value),
                    "error": r.error.map(finite_or_null),
                    "units": r.units,
                })
            })
            .collect();
        let mut obj = json!({
            "run_id": self.run_id,
            "subcommand": subcommand,
            "config_hash": self.config_hash,
            "config": Value::Object(
                canonical
                    .iter()
                    .map(|(s, body)| {
                        let obj = body.iter().map(|(k, v)| (k.clone(), toml_to_json(v))).collect();
                        (s.clone(), Value::Object(obj))
                    })
                    .collect(),
            ),
            "results": results,
            "notes": Value::Object(self.notes.clone()),
        });
        if let Some(ts) = self.timestamp {
            obj["timestamp"] = json!(ts);
        }
        obj
    }
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn toml_to_json(v: &toml::Value) -> Value {
    match v {
        toml::Value::String(s) => json!(s),
        toml::Value::Integer(i) => json!(i),
        toml::Value::Float(f) => finite_or_null(*f),
        toml::Value::Boolean(b) => json!(b),
        toml::Value::Datetime(d) => json!(d.to_string()),
        toml::Value::Array(a) => Value::Array(a.iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => Value::Object(t.iter().map(|(k, v)| (k.clone(), toml_to_json(v))).collect()),
    }
}

/// Rows of per-sample detail with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Detail {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Detail {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }
}

/// Shortest round-trip representation.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    FCurve,
    TDerivative,
    Histogram,
    QqPairs,
    VarianceScaling,
}

impl PlotKind {
    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::FCurve => "f_curve.dat",
            PlotKind::TDerivative => "t_derivative.dat",
            PlotKind::Histogram => "histogram.dat",
            PlotKind::QqPairs => "qq.dat",
            PlotKind::VarianceScaling => "variance_scaling.dat",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::FCurve => &["q", "rfim_pressure", "rfim_stderr", "F"],
            PlotKind::TDerivative => &["t", "mean_derivative", "mean_prediction", "residual", "residual_stderr"],
            PlotKind::Histogram => &["bin_left", "count"],
            PlotKind::QqPairs => &["normal_quantile", "sample_quantile"],
            PlotKind::VarianceScaling => &["volume", "variance", "variance_stderr"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlotStatus {
    Written(PathBuf),
    /// Nothing to write; no file was created.
    Empty,
}

/// Whitespace-separated columns under a `#` header naming the columns and the
/// config hash.
pub fn emit_plot_data(dir: &Path, kind: PlotKind, config_hash: &str, rows: &[Vec<f64>]) -> Result<PlotStatus, CliError> {
    if rows.is_empty() {
        eprintln!("warning: no rows for {}; file not written", kind.file_name());
        return Ok(PlotStatus::Empty);
    }
    let cols = kind.columns();
    let mut text = format!("# columns: {}\n# config_hash: {config_hash}\n", cols.join(" "));
    for row in rows {
        if row.len() != cols.len() {
            return Err(CliError::Io(format!(
                "{}: row has {} values, expected {}",
                kind.file_name(),
                row.len(),
                cols.len()
            )));
        }
        text.push_str(&row.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" "));
        text.push('\n');
    }
    let path = dir.join(kind.file_name());
    fs::write(&path, text)?;
    Ok(PlotStatus::Written(path))
}

pub fn write_summary(dir: &Path, summary: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join("summary.json"), text)?;
    Ok(())
}

pub fn write_detail(dir: &Path, detail: &Detail) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(dir.join("detail.csv"))?;
    w.write_record(&detail.header)?;
    for row in &detail.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
