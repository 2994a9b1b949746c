//! The replica-symmetric functional
//! `F(q) = p^RFIM(κ, h, β√q) + β²/4 (1-q)²`, its minimizer, the
//! self-consistent overlap equation and the `κ = 0` reference solution.

use rayon::prelude::*;

use crate::disorder::{sample_fields, SeedDerivation, StreamPurpose};
use crate::error::{Error, Result};
use crate::exact::{self, chain_log_partition, chain_magnetizations, RfimRoute};
use crate::hamiltonians::QuadraticForm;
use crate::lattice::{BoxGeometry, InteractionKernel};
use crate::mc::{self, ChainSeed, McConfig};
use crate::numerics::{golden_section, log_2cosh, GaussHermite};
use crate::stats;

/// Largest box evaluated by enumeration inside the RS solver. Exact routes
/// are tried cheapest first: factorized, transfer matrix, enumeration.
pub const RS_ENUMERATION_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineChoice {
    Auto,
    Exact,
    MonteCarlo,
    /// Infinite-volume `κ = 0` pressure by Gauss–Hermite quadrature of the
    /// given order; field draws are not used.
    Quadrature(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectedEngine {
    Quadrature(usize),
    Factorized,
    TransferMatrix,
    Enumeration,
    MonteCarlo,
}

impl SelectedEngine {
    pub fn name(&self) -> &'static str {
        match self {
            SelectedEngine::Quadrature(_) => "quadrature",
            SelectedEngine::Factorized => "factorized",
            SelectedEngine::TransferMatrix => "transfer-matrix",
            SelectedEngine::Enumeration => "enumeration",
            SelectedEngine::MonteCarlo => "monte-carlo",
        }
    }

    pub fn is_exact(&self) -> bool {
        *self != SelectedEngine::MonteCarlo
    }
}

/// How `p^RFIM` and site magnetizations are disorder-averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub geometry: BoxGeometry,
    pub kernel: InteractionKernel,
    pub n_samples: usize,
    pub master_seed: u64,
    pub engine: EngineChoice,
    pub mc: McConfig,
    /// Reuse the same field draws for every `q`.
    pub common_random_numbers: bool,
}

impl EstimatorConfig {
    pub fn new(geometry: BoxGeometry, kernel: InteractionKernel, n_samples: usize, master_seed: u64) -> Self {
        Self {
            geometry,
            kernel,
            n_samples,
            master_seed,
            engine: EngineChoice::Auto,
            mc: McConfig::default(),
            common_random_numbers: true,
        }
    }

    pub fn select(&self, kappa: f64) -> Result<SelectedEngine> {
        let g = &self.geometry;
        let exact = if kappa == 0.0 || self.kernel.is_zero() {
            Some(SelectedEngine::Factorized)
        } else if g.dim() == 1 && self.kernel.is_chain_nearest_neighbor() {
            Some(SelectedEngine::TransferMatrix)
        } else if g.volume() <= RS_ENUMERATION_CAP {
            Some(SelectedEngine::Enumeration)
        } else {
            None
        };
        match (self.engine, exact) {
            (EngineChoice::Quadrature(order), Some(SelectedEngine::Factorized)) => Ok(SelectedEngine::Quadrature(order)),
            (EngineChoice::Quadrature(_), _) => Err(Error::Unsupported(
                "quadrature route needs kappa = 0 or a zero kernel".into(),
            )),
            (EngineChoice::MonteCarlo, _) => Ok(SelectedEngine::MonteCarlo),
            (_, Some(e)) => Ok(e),
            (EngineChoice::Auto, None) => Ok(SelectedEngine::MonteCarlo),
            (EngineChoice::Exact, None) => Err(Error::size(format!(
                "no exact RFIM route for a {}-site box in d = {}",
                g.volume(),
                g.dim()
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 && !matches!(self.engine, EngineChoice::Quadrature(_)) {
            return Err(Error::domain("estimator needs at least two disorder samples"));
        }
        if self.kernel.dim() != self.geometry.dim() {
            return Err(Error::domain("kernel and box dimensions differ"));
        }
        Ok(())
    }

    /// Field draws for sample `idx` at trial overlap `q`.
    fn fields(&self, idx: u64, q: f64) -> Vec<f64> {
        let seed = if self.common_random_numbers {
            self.master_seed
        } else {
            SeedDerivation::new(self.master_seed).child_seed(StreamPurpose::Auxiliary, &[q.to_bits()])
        };
        sample_fields(self.geometry.volume(), seed, idx)
    }
}

/// Per-sample `p^RFIM` at field strength `gamma`.
fn sample_pressure(
    cfg: &EstimatorConfig,
    engine: SelectedEngine,
    kappa: f64,
    h: f64,
    gamma: f64,
    fields: &[f64],
    idx: u64,
) -> Result<f64> {
    let g = &cfg.geometry;
    let n = g.volume() as f64;
    match engine {
        SelectedEngine::Quadrature(order) => Ok(GaussHermite::new(order)?.expect(|z| log_2cosh(h + gamma * z))),
        SelectedEngine::Factorized => Ok(fields.iter().map(|j| log_2cosh(h + gamma * j)).sum::<f64>() / n),
        SelectedEngine::TransferMatrix => {
            let b: Vec<f64> = fields.iter().map(|j| h + gamma * j).collect();
            Ok(chain_log_partition(kappa * cfg.kernel.value(&[1]), &b) / n)
        }
        SelectedEngine::Enumeration => exact::rfim_pressure_exact(g, &cfg.kernel, kappa, h, gamma, fields),
        SelectedEngine::MonteCarlo => {
            let form = QuadraticForm::rfim(g, &cfg.kernel, kappa, h, gamma, fields)?;
            Ok(mc::thermo_integration_form(&form, &cfg.mc, &ChainSeed::new(cfg.master_seed, &[idx]))?
                .pressure
                .mean)
        }
    }
}

/// Per-sample `|Λ|^{-1} Σ_i ⟨σ_i⟩²` at field strength `gamma`.
fn sample_edwards_anderson(
    cfg: &EstimatorConfig,
    engine: SelectedEngine,
    kappa: f64,
    h: f64,
    gamma: f64,
    fields: &[f64],
    idx: u64,
) -> Result<f64> {
    let g = &cfg.geometry;
    let m = match engine {
        SelectedEngine::Quadrature(order) => {
            return GaussHermite::new(order).map(|gh| gh.expect(|z| (h + gamma * z).tanh().powi(2)))
        }
        SelectedEngine::Factorized => fields.iter().map(|j| (h + gamma * j).tanh()).collect(),
        SelectedEngine::TransferMatrix => {
            let b: Vec<f64> = fields.iter().map(|j| h + gamma * j).collect();
            chain_magnetizations(kappa * cfg.kernel.value(&[1]), &b)
        }
        SelectedEngine::Enumeration => exact::rfim_magnetizations(g, &cfg.kernel, kappa, h, gamma, fields)?,
        SelectedEngine::MonteCarlo => {
            let form = QuadraticForm::rfim(g, &cfg.kernel, kappa, h, gamma, fields)?;
            mc::estimate_magnetizations(&form, &cfg.mc, ChainSeed::new(cfg.master_seed, &[idx]))?
                .iter()
                .map(|e| e.mean)
                .collect::<Vec<_>>()
        }
    };
    Ok(m.iter().map(|x| x * x).sum::<f64>() / m.len() as f64)
}

/// Per-sample pressures of the RFIM with `γ = β√q`, in sample order.
pub fn rfim_pressure_samples(kappa: f64, beta: f64, h: f64, q: f64, cfg: &EstimatorConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let engine = cfg.select(kappa)?;
    let gamma = beta * q.sqrt();
    if let SelectedEngine::Quadrature(_) = engine {
        let v = sample_pressure(cfg, engine, kappa, h, gamma, &[], 0)?;
        return Ok(vec![v; cfg.n_samples]);
    }
    (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|idx| sample_pressure(cfg, engine, kappa, h, gamma, &cfg.fields(idx, q), idx))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsFunctionalPoint {
    pub q: f64,
    pub rfim_pressure: f64,
    pub rfim_stderr: f64,
    pub f_value: f64,
    pub engine: SelectedEngine,
    pub n_samples: usize,
    pub volume: usize,
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!("q = {q} outside [0, 1]")));
    }
    Ok(())
}

pub fn quartic_term(beta: f64, q: f64) -> f64 {
    0.25 * beta * beta * (1.0 - q).powi(2)
}

#[allow(non_snake_case)]
pub fn evaluate_F(q: f64, kappa: f64, beta: f64, h: f64, cfg: &EstimatorConfig) -> Result<RsFunctionalPoint> {
    check_q(q)?;
    let samples = rfim_pressure_samples(kappa, beta, h, q, cfg).map_err(|e| e.context("p^RFIM estimator"))?;
    let p = stats::mean(&samples);
    Ok(RsFunctionalPoint {
        q,
        rfim_pressure: p,
        rfim_stderr: stats::std_error(&samples),
        f_value: p + quartic_term(beta, q),
        engine: cfg.select(kappa)?,
        n_samples: cfg.n_samples,
        volume: cfg.geometry.volume(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            step: 0.01,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsSolution {
    pub qbar: f64,
    pub f_min: f64,
    pub f_min_stderr: f64,
    /// Filled by [`solve`]; `NaN` after [`minimize_F`] alone.
    pub fixed_point_q: f64,
    pub second_derivative_estimate: f64,
    pub agreement_gap: f64,
    pub grid: Vec<RsFunctionalPoint>,
    /// Other grid-local minima within two standard errors of the best.
    pub near_degenerate: Vec<f64>,
}

impl RsSolution {
    pub fn is_unique(&self) -> bool {
        self.near_degenerate.is_empty()
    }
}

/// Grid scan with common random numbers, then golden-section refinement on
/// the bracket around the best grid point.
#[allow(non_snake_case)]
pub fn minimize_F(kappa: f64, beta: f64, h: f64, grid: &GridConfig, cfg: &EstimatorConfig) -> Result<RsSolution> {
    if beta == 0.0 {
        return Err(Error::Degenerate(
            "beta = 0: F is flat in q and its minimizer is undefined".into(),
        ));
    }
    if !(grid.step > 0.0 && grid.step <= 0.5) {
        return Err(Error::domain("grid step must be in (0, 0.5]"));
    }
    let count = (1.0 / grid.step).round() as usize;
    let qs: Vec<f64> = (0..=count).map(|k| (k as f64 * grid.step).min(1.0)).collect();
    let points = qs
        .iter()
        .map(|&q| evaluate_F(q, kappa, beta, h, cfg))
        .collect::<Result<Vec<_>>>()?;
    let best = (0..points.len())
        .min_by(|&a, &b| points[a].f_value.total_cmp(&points[b].f_value))
        .unwrap();
    let lo = qs[best.saturating_sub(1)];
    let hi = qs[(best + 1).min(qs.len() - 1)];
    let f = |q: f64| evaluate_F(q, kappa, beta, h, cfg).map(|p| p.f_value).unwrap_or(f64::INFINITY);
    let (mut qbar, mut f_min) = golden_section(lo, hi, grid.tolerance, f);
    if points[best].f_value < f_min {
        qbar = points[best].q;
        f_min = points[best].f_value;
    }
    let at_min = evaluate_F(qbar, kappa, beta, h, cfg)?;
    let best_f = points[best].f_value;
    let near_degenerate = (0..points.len())
        .filter(|&k| k != best && (k as isize - best as isize).abs() > 1)
        .filter(|&k| {
            let left = k == 0 || points[k].f_value <= points[k - 1].f_value;
            let right = k + 1 == points.len() || points[k].f_value <= points[k + 1].f_value;
            left && right && points[k].f_value - best_f <= 2.0 * points[k].rfim_stderr.max(points[best].rfim_stderr)
        })
        .map(|k| points[k].q)
        .collect();
    Ok(RsSolution {
        qbar,
        f_min,
        f_min_stderr: at_min.rfim_stderr,
        fixed_point_q: f64::NAN,
        second_derivative_estimate: f64::NAN,
        agreement_gap: f64::NAN,
        grid: points,
        near_degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationConfig {
    pub omega: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub start: f64,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            omega: 0.5,
            tolerance: 1e-4,
            max_iterations: 200,
            start: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub q: f64,
    pub trajectory: Vec<f64>,
}

/// `Φ(q) = E |Λ|^{-1} Σ_i ⟨σ_i⟩²` at `γ = β√q`.
pub fn self_consistency_map(kappa: f64, beta: f64, h: f64, q: f64, cfg: &EstimatorConfig) -> Result<f64> {
    cfg.validate()?;
    check_q(q)?;
    let engine = cfg.select(kappa)?;
    let gamma = beta * q.sqrt();
    if let SelectedEngine::Quadrature(_) = engine {
        return sample_edwards_anderson(cfg, engine, kappa, h, gamma, &[], 0);
    }
    let v: Vec<f64> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|idx| sample_edwards_anderson(cfg, engine, kappa, h, gamma, &cfg.fields(idx, 0.0), idx))
        .collect::<Result<_>>()?;
    Ok(stats::mean(&v))
}

/// Damped iteration `q ← (1-ω) q + ω Φ(q)`, projected onto `[0, 1]`.
pub fn fixed_point_qbar(
    kappa: f64,
    beta: f64,
    h: f64,
    iteration: &IterationConfig,
    cfg: &EstimatorConfig,
) -> Result<FixedPoint> {
    if beta < 0.0 {
        return Err(Error::domain("beta must be >= 0"));
    }
    let mut q = iteration.start.clamp(0.0, 1.0);
    let mut trajectory = vec![q];
    if beta == 0.0 {
        // Φ does not depend on q
        let v = self_consistency_map(kappa, beta, h, q, cfg)?;
        trajectory.push(v);
        return Ok(FixedPoint { q: v, trajectory });
    }
    for _ in 0..iteration.max_iterations {
        let phi = self_consistency_map(kappa, beta, h, q, cfg)?;
        let next = ((1.0 - iteration.omega) * q + iteration.omega * phi).clamp(0.0, 1.0);
        trajectory.push(next);
        let done = (next - q).abs() < iteration.tolerance;
        q = next;
        if done {
            return Ok(FixedPoint { q, trajectory });
        }
    }
    Err(Error::Convergence {
        context: format!("self-consistent overlap at kappa={kappa}, beta={beta}, h={h}"),
        iterations: iteration.max_iterations,
        trajectory,
    })
}

/// `κ = 0` reference: root of `q = E tanh²(h + β√q z)` and
/// `p_rs = log 2 + E log cosh(h + β√q z) + β²/4 (1-q)²`.
pub fn sk_rs_reference(beta: f64, h: f64, order: usize) -> Result<(f64, f64)> {
    if order < 40 {
        return Err(Error::domain("quadrature order must be at least 40"));
    }
    let gh = GaussHermite::new(order)?;
    let phi = |q: f64| gh.expect(|z| (h + beta * q.sqrt() * z).tanh().powi(2));
    let mut q = h.tanh().powi(2);
    let mut trajectory = vec![q];
    let max = 100_000;
    for _ in 0..max {
        let next = 0.5 * q + 0.5 * phi(q);
        if trajectory.len() < 64 {
            trajectory.push(next);
        }
        let done = (next - q).abs() < 1e-14;
        q = next;
        if done {
            let p = std::f64::consts::LN_2
                + gh.expect(|z| log_2cosh(h + beta * q.sqrt() * z) - std::f64::consts::LN_2)
                + quartic_term(beta, q);
            return Ok((q, p));
        }
    }
    Err(Error::Convergence {
        context: format!("SK replica-symmetric root at beta={beta}, h={h}"),
        iterations: max,
        trajectory,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub pressure: f64,
    pub stderr: f64,
    pub qbar: f64,
}

/// `inf_q F(q)`; at `β = 0` the functional is flat and its common value is
/// returned.
pub fn rs_pressure_prediction(
    kappa: f64,
    beta: f64,
    h: f64,
    grid: &GridConfig,
    cfg: &EstimatorConfig,
) -> Result<Prediction> {
    if beta == 0.0 {
        let p = evaluate_F(0.0, kappa, 0.0, h, cfg)?;
        return Ok(Prediction {
            pressure: p.f_value,
            stderr: p.rfim_stderr,
            qbar: f64::NAN,
        });
    }
    let sol = minimize_F(kappa, beta, h, grid, cfg)?;
    Ok(Prediction {
        pressure: sol.f_min,
        stderr: sol.f_min_stderr,
        qbar: sol.qbar,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curvature {
    Value { second_derivative: f64, stderr: f64 },
    Boundary,
}

pub const CURVATURE_STEP: f64 = 0.02;

/// Central second difference of `F` at `qbar` with common random numbers.
pub fn curvature_check(kappa: f64, beta: f64, h: f64, qbar: f64, cfg: &EstimatorConfig) -> Result<Curvature> {
    check_q(qbar)?;
    let d = CURVATURE_STEP;
    if qbar - d < 0.0 || qbar + d > 1.0 {
        return Ok(Curvature::Boundary);
    }
    let mut crn = cfg.clone();
    crn.common_random_numbers = true;
    let lo = rfim_pressure_samples(kappa, beta, h, qbar - d, &crn)?;
    let mid = rfim_pressure_samples(kappa, beta, h, qbar, &crn)?;
    let hi = rfim_pressure_samples(kappa, beta, h, qbar + d, &crn)?;
    let quart = quartic_term(beta, qbar - d) - 2.0 * quartic_term(beta, qbar) + quartic_term(beta, qbar + d);
    let per: Vec<f64> = (0..lo.len())
        .map(|k| (lo[k] - 2.0 * mid[k] + hi[k] + quart) / (d * d))
        .collect();
    Ok(Curvature::Value {
        second_derivative: stats::mean(&per),
        stderr: stats::std_error(&per),
    })
}

/// Minimizer, fixed point and curvature together.
pub fn solve(
    kappa: f64,
    beta: f64,
    h: f64,
    grid: &GridConfig,
    iteration: &IterationConfig,
    cfg: &EstimatorConfig,
) -> Result<RsSolution> {
    let mut sol = minimize_F(kappa, beta, h, grid, cfg)?;
    let fp = fixed_point_qbar(kappa, beta, h, iteration, cfg)?;
    sol.fixed_point_q = fp.q;
    sol.agreement_gap = (sol.qbar - fp.q).abs();
    sol.second_derivative_estimate = match curvature_check(kappa, beta, h, sol.qbar, cfg)? {
        Curvature::Value { second_derivative, .. } => second_derivative,
        Curvature::Boundary => f64::NAN,
    };
    Ok(sol)
}

/// Route used by the exact engine for a given box, for reporting.
pub fn exact_route(cfg: &EstimatorConfig, kappa: f64) -> Result<RfimRoute> {
    exact::rfim_route(&cfg.geometry, &cfg.kernel, kappa)
}
