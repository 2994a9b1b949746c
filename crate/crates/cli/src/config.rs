//! Experiment configuration: a sectioned `key = value` file (TOML syntax),
//! command-line overrides, validation and the canonical form that is hashed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use isk_core::hamiltonians::{ModelParams, SkDiagonal};
use isk_core::lattice::{BoxGeometry, InteractionKernel};
use isk_core::mc::{uniform_nodes, McConfig};
use sha2::{Digest, Sha256};
use toml::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Subcommand {
    Pressure,
    RsSolve,
    InterpolateCheck,
    Dobrushin,
    Fluctuations,
    Gamma,
    McValidate,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Subcommand::Pressure,
        Subcommand::RsSolve,
        Subcommand::InterpolateCheck,
        Subcommand::Dobrushin,
        Subcommand::Fluctuations,
        Subcommand::Gamma,
        Subcommand::McValidate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Pressure => "pressure",
            Subcommand::RsSolve => "rs-solve",
            Subcommand::InterpolateCheck => "interpolate-check",
            Subcommand::Dobrushin => "dobrushin",
            Subcommand::Fluctuations => "fluctuations",
            Subcommand::Gamma => "gamma",
            Subcommand::McValidate => "mc-validate",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            Subcommand::Pressure | Subcommand::Dobrushin | Subcommand::McValidate => &[],
            Subcommand::RsSolve => &[
                "grid_step",
                "tolerance",
                "omega",
                "iteration_tolerance",
                "max_iterations",
                "start",
                "quadrature_order",
            ],
            Subcommand::InterpolateCheck => &["t_grid", "fd_step"],
            Subcommand::Fluctuations => &["sizes", "model", "bins"],
            Subcommand::Gamma => &["qbar", "buffer", "n_outer", "n_inner", "quadrature_order"],
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const COMMON: [(&str, &[&str]); 5] = [
    ("run", &["subcommand", "seed", "n_samples", "engine", "workers", "out"]),
    ("geometry", &["dim", "length", "radius"]),
    ("kernel", &["spec", "file"]),
    ("params", &["kappa", "beta", "h", "gamma", "t", "q", "lambda", "mu", "sk_diagonal"]),
    ("mc", &["burn_in", "n_sweeps", "nodes"]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineKind {
    Auto,
    Exact,
    MonteCarlo,
    Quadrature,
}

impl EngineKind {
    fn name(self) -> &'static str {
        match self {
            EngineKind::Auto => "auto",
            EngineKind::Exact => "exact",
            EngineKind::MonteCarlo => "mc",
            EngineKind::Quadrature => "quadrature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometrySpec {
    /// `{0..length-1}^dim`
    Length(usize),
    /// `{-radius..radius}^dim`
    Radius(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluctuationModel {
    Isk,
    Rfim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsOptions {
    pub grid_step: f64,
    pub tolerance: f64,
    pub omega: f64,
    pub iteration_tolerance: f64,
    pub max_iterations: usize,
    pub start: f64,
    pub quadrature_order: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolateOptions {
    pub t_grid: Vec<f64>,
    pub fd_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationOptions {
    pub sizes: Vec<usize>,
    pub model: FluctuationModel,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaOptions {
    /// `None`: solve the self-consistent equation on the configured box.
    pub qbar: Option<f64>,
    pub buffer: u32,
    pub n_outer: usize,
    pub n_inner: usize,
    pub quadrature_order: usize,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub subcommand: Subcommand,
    pub seed: u64,
    pub n_samples: usize,
    pub engine: EngineKind,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub dim: usize,
    pub geometry: GeometrySpec,
    pub kernel: InteractionKernel,
    pub params: ModelParams,
    pub mc: McConfig,
    pub rs: RsOptions,
    pub interpolate: InterpolateOptions,
    pub fluctuations: FluctuationOptions,
    pub gamma: GammaOptions,
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

pub type Table = BTreeMap<String, BTreeMap<String, Value>>;

/// Line of `key` inside `[section]`, for diagnostics.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(inner) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = inner.trim().trim_matches('"').to_string();
            continue;
        }
        if current == section {
            let k = line.split('=').next().unwrap_or("").trim().trim_matches('"');
            if k == key {
                return Some(i + 1);
            }
        }
    }
    None
}

struct Reader<'a> {
    text: &'a str,
    table: Table,
}

impl Reader<'_> {
    fn err(&self, section: &str, key: &str, message: impl Into<String>) -> CliError {
        CliError::Config {
            line: locate(self.text, section, key),
            field: format!("{section}.{key}"),
            message: message.into(),
        }
    }

    fn get(&self, section: &str, key: &str) -> Option<&Value> {
        self.table.get(section).and_then(|s| s.get(key))
    }

    fn float(&self, section: &str, key: &str, default: f64) -> Result<f64, CliError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(Value::Float(x)) if x.is_finite() => Ok(*x),
            Some(Value::Integer(i)) => Ok(*i as f64),
            Some(v) => Err(self.err(section, key, format!("expected a finite number, found {v}"))),
        }
    }

    fn opt_float(&self, section: &str, key: &str) -> Result<Option<f64>, CliError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(_) => self.float(section, key, 0.0).map(Some),
        }
    }

    fn uint(&self, section: &str, key: &str, default: u64) -> Result<u64, CliError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(v) => Err(self.err(section, key, format!("expected a non-negative integer, found {v}"))),
        }
    }

    fn opt_uint(&self, section: &str, key: &str) -> Result<Option<u64>, CliError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(_) => self.uint(section, key, 0).map(Some),
        }
    }

    fn string(&self, section: &str, key: &str) -> Result<Option<String>, CliError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(self.err(section, key, format!("expected a string, found {v}"))),
        }
    }

    fn float_list(&self, section: &str, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(x) if x.is_finite() => Ok(*x),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(self.err(section, key, format!("expected numbers, found {v}"))),
                })
                .collect(),
            Some(v) => Err(self.err(section, key, format!("expected an array, found {v}"))),
        }
    }

    fn uint_list(&self, section: &str, key: &str, default: &[usize]) -> Result<Vec<usize>, CliError> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i > 0 => Ok(*i as usize),
                    _ => Err(self.err(section, key, format!("expected positive integers, found {v}"))),
                })
                .collect(),
            Some(v) => Err(self.err(section, key, format!("expected an array, found {v}"))),
        }
    }
}

fn parse_table(text: &str) -> Result<Table, CliError> {
    let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1));
        CliError::Config {
            line,
            field: String::new(),
            message: e.message().to_string(),
        }
    })?;
    let mut table = Table::new();
    for (section, body) in raw {
        let known = COMMON.iter().any(|(s, _)| *s == section) || Subcommand::ALL.iter().any(|c| c.name() == section);
        if !known {
            return Err(CliError::Config {
                line: text.lines().position(|l| l.trim().trim_matches(['[', ']']) == section).map(|i| i + 1),
                field: section.clone(),
                message: "unknown section".into(),
            });
        }
        let Value::Table(body) = body else {
            return Err(CliError::Config {
                line: locate(text, "", &section),
                field: section,
                message: "top-level keys must live in a section".into(),
            });
        };
        let allowed: &[&str] = COMMON
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, k)| *k)
            .or_else(|| Subcommand::ALL.iter().find(|c| c.name() == section).map(|c| c.keys()))
            .unwrap_or(&[]);
        for key in body.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Config {
                    line: locate(text, &section, key),
                    field: format!("{section}.{key}"),
                    message: "unknown key".into(),
                });
            }
        }
        table.insert(section, body.into_iter().collect());
    }
    Ok(table)
}

impl ExperimentConfig {
    /// Parse, apply overrides and validate.
    pub fn load(subcommand: Subcommand, text: &str, overrides: &Overrides) -> Result<Self, CliError> {
        let r = Reader {
            text,
            table: parse_table(text)?,
        };
        if let Some(name) = r.string("run", "subcommand")? {
            if name != subcommand.name() {
                return Err(r.err(
                    "run",
                    "subcommand",
                    format!("file is for {name:?} but {:?} was requested", subcommand.name()),
                ));
            }
        }
        let seed = match (overrides.seed, r.get("run", "seed")) {
            (Some(s), _) => s,
            (None, Some(Value::String(s))) => s
                .parse()
                .map_err(|_| r.err("run", "seed", format!("expected an unsigned 64-bit integer, found {s:?}")))?,
            (None, _) => r.uint("run", "seed", 0)?,
        };
        let n_samples = r.uint("run", "n_samples", 100)? as usize;
        if n_samples == 0 {
            return Err(r.err("run", "n_samples", "must be positive"));
        }
        let engine = match r.string("run", "engine")?.as_deref() {
            None | Some("auto") => EngineKind::Auto,
            Some("exact") => EngineKind::Exact,
            Some("mc") => EngineKind::MonteCarlo,
            Some("quadrature") => EngineKind::Quadrature,
            Some(other) => return Err(r.err("run", "engine", format!("unknown engine {other:?}"))),
        };
        let workers = match overrides.workers {
            Some(w) => w,
            None => r.uint("run", "workers", 1)? as usize,
        };
        if workers == 0 {
            return Err(CliError::Config {
                line: locate(text, "run", "workers"),
                field: "run.workers".into(),
                message: "must be positive".into(),
            });
        }
        let out = overrides.out.clone().or(r.string("run", "out")?.map(PathBuf::from));

        let dim = r.uint("geometry", "dim", 1)? as usize;
        if !(1..=3).contains(&dim) {
            return Err(r.err("geometry", "dim", "dimension must be 1, 2 or 3"));
        }
        let geometry = match (r.opt_uint("geometry", "length")?, r.opt_uint("geometry", "radius")?) {
            (Some(_), Some(_)) => return Err(r.err("geometry", "radius", "give either length or radius, not both")),
            (Some(0), None) => return Err(r.err("geometry", "length", "must be positive")),
            (Some(l), None) => GeometrySpec::Length(l as usize),
            (None, Some(rad)) => GeometrySpec::Radius(
                u32::try_from(rad).map_err(|_| r.err("geometry", "radius", "radius too large"))?,
            ),
            (None, None) => GeometrySpec::Length(12),
        };

        let kernel_text = match (r.string("kernel", "spec")?, r.string("kernel", "file")?) {
            (Some(_), Some(_)) => return Err(r.err("kernel", "file", "give either spec or file, not both")),
            (Some(s), None) => s,
            (None, Some(path)) => std::fs::read_to_string(&path)
                .map_err(|e| r.err("kernel", "file", format!("cannot read {path:?}: {e}")))?,
            (None, None) => "nn".to_string(),
        };
        let kernel_key = if r.get("kernel", "file").is_some() { "file" } else { "spec" };
        let kernel = InteractionKernel::parse_spec(&kernel_text, dim)
            .map_err(|e| r.err("kernel", kernel_key, e.to_string()))?;

        let sk_diagonal = match r.string("params", "sk_diagonal")?.as_deref() {
            None | Some("included") => SkDiagonal::Included,
            Some("excluded") => SkDiagonal::Excluded,
            Some(other) => {
                return Err(r.err("params", "sk_diagonal", format!("expected included or excluded, got {other:?}")))
            }
        };
        let params = ModelParams::new(
            r.float("params", "kappa", 0.05)?,
            r.float("params", "beta", 0.3)?,
            r.float("params", "h", 0.4)?,
        )
        .with_gamma(r.float("params", "gamma", 0.0)?)
        .with_t(r.float("params", "t", 1.0)?)
        .with_q(r.float("params", "q", 0.0)?)
        .with_lambda(r.float("params", "lambda", 0.0)?)
        .with_mu(r.float("params", "mu", 0.0)?)
        .with_sk_diagonal(sk_diagonal);
        for (key, v) in [
            ("kappa", params.kappa),
            ("beta", params.beta),
            ("gamma", params.gamma),
            ("lambda", params.lambda),
        ] {
            if v < 0.0 {
                return Err(r.err("params", key, format!("must be >= 0, got {v}")));
            }
        }
        for (key, v) in [("t", params.t), ("q", params.q)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(r.err("params", key, format!("must lie in [0, 1], got {v}")));
            }
        }
        params.validate().map_err(|e| r.err("params", "kappa", e.to_string()))?;

        let defaults = McConfig::default();
        let node_count = r.uint("mc", "nodes", defaults.nodes.len() as u64)? as usize;
        if node_count < 3 || node_count % 2 == 0 {
            return Err(r.err("mc", "nodes", "need an odd number of nodes, at least 3"));
        }
        let mc = McConfig {
            burn_in: r.uint("mc", "burn_in", defaults.burn_in as u64)? as usize,
            n_sweeps: r.uint("mc", "n_sweeps", defaults.n_sweeps as u64)? as usize,
            nodes: uniform_nodes(node_count),
        };
        if mc.n_sweeps < 2 {
            return Err(r.err("mc", "n_sweeps", "need at least two sweeps"));
        }

        let s = Subcommand::RsSolve.name();
        let rs = RsOptions {
            grid_step: r.float(s, "grid_step", 0.01)?,
            tolerance: r.float(s, "tolerance", 1e-4)?,
            omega: r.float(s, "omega", 0.5)?,
            iteration_tolerance: r.float(s, "iteration_tolerance", 1e-4)?,
            max_iterations: r.uint(s, "max_iterations", 200)? as usize,
            start: r.float(s, "start", 0.5)?,
            quadrature_order: r.uint(s, "quadrature_order", 80)? as usize,
        };
        if !(rs.grid_step > 0.0 && rs.grid_step <= 0.5) {
            return Err(r.err(s, "grid_step", "must lie in (0, 0.5]"));
        }
        if !(rs.tolerance > 0.0) {
            return Err(r.err(s, "tolerance", "must be positive"));
        }
        if !(rs.omega > 0.0 && rs.omega <= 1.0) {
            return Err(r.err(s, "omega", "must lie in (0, 1]"));
        }
        if !(rs.iteration_tolerance > 0.0) {
            return Err(r.err(s, "iteration_tolerance", "must be positive"));
        }
        if !(0.0..=1.0).contains(&rs.start) {
            return Err(r.err(s, "start", "must lie in [0, 1]"));
        }
        if !(40..=400).contains(&rs.quadrature_order) {
            return Err(r.err(s, "quadrature_order", "must lie in 40..=400"));
        }

        let s = Subcommand::InterpolateCheck.name();
        let interpolate = InterpolateOptions {
            t_grid: r.float_list(s, "t_grid", &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])?,
            fd_step: r.float(s, "fd_step", 1e-4)?,
        };
        if !(interpolate.fd_step > 0.0 && interpolate.fd_step < 0.5) {
            return Err(r.err(s, "fd_step", "must lie in (0, 0.5)"));
        }
        if interpolate.t_grid.is_empty()
            || interpolate
                .t_grid
                .iter()
                .any(|&t| t - interpolate.fd_step <= 0.0 || t + interpolate.fd_step >= 1.0)
        {
            return Err(r.err(s, "t_grid", "points must lie in (fd_step, 1 - fd_step)"));
        }

        let s = Subcommand::Fluctuations.name();
        let fluctuations = FluctuationOptions {
            sizes: r.uint_list(s, "sizes", &[9, 13, 17, 21])?,
            model: match r.string(s, "model")?.as_deref() {
                None | Some("isk") => FluctuationModel::Isk,
                Some("rfim") => FluctuationModel::Rfim,
                Some(other) => return Err(r.err(s, "model", format!("expected isk or rfim, got {other:?}"))),
            },
            bins: r.uint(s, "bins", 30)? as usize,
        };
        if fluctuations.bins == 0 {
            return Err(r.err(s, "bins", "must be positive"));
        }
        if fluctuations.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(r.err(s, "sizes", "sizes must be strictly increasing"));
        }

        let s = Subcommand::Gamma.name();
        let gamma = GammaOptions {
            qbar: r.opt_float(s, "qbar")?,
            buffer: u32::try_from(r.uint(s, "buffer", 8)?).map_err(|_| r.err(s, "buffer", "too large"))?,
            n_outer: r.uint(s, "n_outer", 20_000)? as usize,
            n_inner: r.uint(s, "n_inner", 16)? as usize,
            quadrature_order: r.uint(s, "quadrature_order", 40)? as usize,
        };
        if let Some(q) = gamma.qbar {
            if !(0.0..=1.0).contains(&q) {
                return Err(r.err(s, "qbar", "must lie in [0, 1]"));
            }
        }
        if gamma.n_outer < 2 {
            return Err(r.err(s, "n_outer", "must be at least 2"));
        }
        if gamma.n_inner < 2 {
            return Err(r.err(s, "n_inner", "must be at least 2"));
        }
        if !(40..=400).contains(&gamma.quadrature_order) {
            return Err(r.err(s, "quadrature_order", "must lie in 40..=400"));
        }

        if engine == EngineKind::Quadrature && subcommand != Subcommand::RsSolve {
            return Err(r.err("run", "engine", "the quadrature engine is only available to rs-solve"));
        }

        Ok(Self {
            subcommand,
            seed,
            n_samples,
            engine,
            workers,
            out,
            dim,
            geometry,
            kernel,
            params,
            mc,
            rs,
            interpolate,
            fluctuations,
            gamma,
        })
    }

    pub fn box_geometry(&self) -> isk_core::Result<BoxGeometry> {
        self.geometry_of(self.geometry)
    }

    pub fn geometry_of(&self, spec: GeometrySpec) -> isk_core::Result<BoxGeometry> {
        match spec {
            GeometrySpec::Length(l) => BoxGeometry::rect(vec![0; self.dim], vec![l as i64 - 1; self.dim]),
            GeometrySpec::Radius(r) => BoxGeometry::cube(self.dim, r),
        }
    }

    /// Every setting that can change results, keyed by section. Worker count
    /// and output location are left out.
    pub fn canonical(&self) -> Table {
        let mut t = Table::new();
        let mut put = |section: &str, key: &str, v: Value| {
            t.entry(section.to_string()).or_default().insert(key.to_string(), v);
        };
        let int = |x: u64| Value::Integer(x as i64);
        put("run", "subcommand", Value::String(self.subcommand.name().into()));
        // u64 seeds beyond i64 are kept exact as strings
        put("run", "seed", Value::String(self.seed.to_string()));
        put("run", "n_samples", int(self.n_samples as u64));
        put("run", "engine", Value::String(self.engine.name().into()));
        put("geometry", "dim", int(self.dim as u64));
        match self.geometry {
            GeometrySpec::Length(l) => put("geometry", "length", int(l as u64)),
            GeometrySpec::Radius(r) => put("geometry", "radius", int(r as u64)),
        }
        put("kernel", "spec", Value::String(self.kernel.to_table()));
        let p = &self.params;
        for (k, v) in [
            ("kappa", p.kappa),
            ("beta", p.beta),
            ("h", p.h),
            ("gamma", p.gamma),
            ("t", p.t),
            ("q", p.q),
            ("lambda", p.lambda),
            ("mu", p.mu),
        ] {
            put("params", k, Value::Float(v));
        }
        let diag = match p.sk_diagonal {
            SkDiagonal::Included => "included",
            SkDiagonal::Excluded => "excluded",
        };
        put("params", "sk_diagonal", Value::String(diag.into()));
        put("mc", "burn_in", int(self.mc.burn_in as u64));
        put("mc", "n_sweeps", int(self.mc.n_sweeps as u64));
        put("mc", "nodes", int(self.mc.nodes.len() as u64));
        let s = self.subcommand.name();
        match self.subcommand {
            Subcommand::RsSolve => {
                put(s, "grid_step", Value::Float(self.rs.grid_step));
                put(s, "tolerance", Value::Float(self.rs.tolerance));
                put(s, "omega", Value::Float(self.rs.omega));
                put(s, "iteration_tolerance", Value::Float(self.rs.iteration_tolerance));
                put(s, "max_iterations", int(self.rs.max_iterations as u64));
                put(s, "start", Value::Float(self.rs.start));
                put(s, "quadrature_order", int(self.rs.quadrature_order as u64));
            }
            Subcommand::InterpolateCheck => {
                put(
                    s,
                    "t_grid",
                    Value::Array(self.interpolate.t_grid.iter().map(|&x| Value::Float(x)).collect()),
                );
                put(s, "fd_step", Value::Float(self.interpolate.fd_step));
            }
            Subcommand::Fluctuations => {
                put(
                    s,
                    "sizes",
                    Value::Array(self.fluctuations.sizes.iter().map(|&x| int(x as u64)).collect()),
                );
                let m = match self.fluctuations.model {
                    FluctuationModel::Isk => "isk",
                    FluctuationModel::Rfim => "rfim",
                };
                put(s, "model", Value::String(m.into()));
                put(s, "bins", int(self.fluctuations.bins as u64));
            }
            Subcommand::Gamma => {
                if let Some(q) = self.gamma.qbar {
                    put(s, "qbar", Value::Float(q));
                }
                put(s, "buffer", int(self.gamma.buffer as u64));
                put(s, "n_outer", int(self.gamma.n_outer as u64));
                put(s, "n_inner", int(self.gamma.n_inner as u64));
                put(s, "quadrature_order", int(self.gamma.quadrature_order as u64));
            }
            Subcommand::Pressure | Subcommand::Dobrushin | Subcommand::McValidate => {}
        }
        t
    }

    /// The canonical configuration in the input file format.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (section, body) in self.canonical() {
            out.push_str(&format!("[{section}]\n"));
            for (k, v) in body {
                out.push_str(&format!("{k} = {}\n", render(&v)));
            }
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn render(v: &Value) -> String {
    match v {
        // keep the float marker so that integral values read back as floats
        Value::Float(x) if x.fract() == 0.0 && x.abs() < 1e15 => format!("{x:.1}"),
        Value::Float(x) => format!("{x:?}"),
        Value::Array(a) => format!("[{}]", a.iter().map(render).collect::<Vec<_>>().join(", ")),
        Value::String(s) if s.contains('\n') => format!("'''\n{s}'''"),
        other => other.to_string(),
    }
}
