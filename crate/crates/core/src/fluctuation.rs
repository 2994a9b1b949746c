//! Pressure fluctuations: disorder ensembles, normality tests, the limiting
//! variance `Γ - β² q̄²/2`, martingale increments and volume scaling.

use rand::Rng;
use rayon::prelude::*;

use crate::disorder::{sample_disorder, sample_fields, standard_normals, SeedDerivation, StreamPurpose};
use crate::error::{Error, Result};
use crate::exact;
use crate::hamiltonians::{ModelParams, QuadraticForm};
use crate::lattice::{uniqueness_check, BoxGeometry, InteractionKernel};
use crate::mc::{self, ChainSeed, Engine};
use crate::numerics::{log_2cosh, GaussHermite};
use crate::stats;

/// Which energy an ensemble samples.
#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleModel {
    /// `H^(t)` at the given parameters (`t = 1` is the full model).
    Interpolating(ModelParams),
    /// `κ H^I - Σ σ_i (h + γ J_i)`.
    Rfim { kappa: f64, h: f64, gamma: f64 },
}

impl EnsembleModel {
    fn form(&self, geometry: &BoxGeometry, kernel: &InteractionKernel, master_seed: u64, idx: u64) -> Result<QuadraticForm> {
        match self {
            EnsembleModel::Interpolating(p) => {
                let sample = sample_disorder(geometry, master_seed, idx);
                QuadraticForm::interpolating(geometry, kernel, &sample, p)
            }
            EnsembleModel::Rfim { kappa, h, gamma } => {
                if *kappa < 0.0 || *gamma < 0.0 {
                    return Err(Error::domain("kappa and gamma must be >= 0"));
                }
                let fields = sample_fields(geometry.volume(), master_seed, idx);
                QuadraticForm::rfim(geometry, kernel, *kappa, *h, *gamma, &fields)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureEnsemble {
    pub model: EnsembleModel,
    pub volume: usize,
    /// `(sample_index, p_N)` in sample order.
    pub entries: Vec<(u64, f64)>,
    pub mean: f64,
    pub variance: f64,
    pub rescaled_variance: f64,
    pub engine: &'static str,
}

impl PressureEnsemble {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }
}

pub fn ensemble_pressures(
    geometry: &BoxGeometry,
    model: &EnsembleModel,
    kernel: &InteractionKernel,
    n_samples: usize,
    master_seed: u64,
    engine: &Engine,
) -> Result<PressureEnsemble> {
    if n_samples < 2 {
        return Err(Error::domain("an ensemble needs at least two samples"));
    }
    let n = geometry.volume() as f64;
    let values: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|idx| {
            let form = model.form(geometry, kernel, master_seed, idx)?;
            match engine {
                Engine::Exact => Ok(exact::log_partition(&form)? / n),
                Engine::MonteCarlo(cfg) => Ok(mc::thermo_integration_form(&form, cfg, &ChainSeed::new(master_seed, &[idx]))?
                    .pressure
                    .mean),
            }
        })
        .collect::<Result<_>>()?;
    let variance = stats::variance(&values);
    Ok(PressureEnsemble {
        model: model.clone(),
        volume: geometry.volume(),
        entries: (0..n_samples as u64).zip(values.iter().copied()).collect(),
        mean: stats::mean(&values),
        variance,
        rescaled_variance: n * variance,
        engine: match engine {
            Engine::Exact => "exact",
            Engine::MonteCarlo(_) => "mc",
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CltReport {
    pub n: usize,
    pub ks_distance: f64,
    pub ks_pvalue: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// KS test of standardized values against the standard normal.
pub fn normality_test(values: &[f64]) -> Result<CltReport> {
    if values.len() < 100 {
        return Err(Error::domain("normality test needs at least 100 values"));
    }
    let m = stats::mean(values);
    let sd = stats::variance(values).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Degenerate("zero variance: the distribution is a point mass".into()));
    }
    let z: Vec<f64> = values.iter().map(|x| (x - m) / sd).collect();
    let d = stats::ks_statistic(&z, stats::normal_cdf);
    Ok(CltReport {
        n: values.len(),
        ks_distance: d,
        ks_pvalue: stats::ks_pvalue(d, values.len()),
        skewness: stats::skewness(&z),
        excess_kurtosis: stats::excess_kurtosis(&z),
    })
}

/// Normality of `√|Λ|(p_N - mean)`; standardization removes the scale.
pub fn clt_test(ensemble: &PressureEnsemble) -> Result<CltReport> {
    let scale = (ensemble.volume as f64).sqrt();
    let v: Vec<f64> = ensemble.entries.iter().map(|e| scale * (e.1 - ensemble.mean)).collect();
    normality_test(&v)
}

/// `log⟨e^{cσ}⟩` for a ±1 spin of mean `m0`: `log(cosh c + m0 sinh c)`.
pub fn tilt_log_moment(c: f64, m0: f64) -> Result<f64> {
    if !(m0.abs() <= 1.0) {
        return Err(Error::domain(format!("magnetization {m0} outside [-1, 1]")));
    }
    Ok(tilt_unchecked(c, m0))
}

#[inline]
fn tilt_unchecked(c: f64, m0: f64) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    let a = c.abs();
    let m = m0 * c.signum();
    // log(½((1+m) + (1-m)e^{-2a})) in log-add-exp form
    let (x, y) = ((1.0 + m).ln(), (1.0 - m).ln() - 2.0 * a);
    let hi = x.max(y);
    a - std::f64::consts::LN_2 + hi + (-(x - y).abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaConfig {
    pub kernel: InteractionKernel,
    /// Half-width of the cubic box around the origin.
    pub buffer: u32,
    pub n_outer: usize,
    pub n_inner: usize,
    pub quadrature_order: usize,
    pub master_seed: u64,
}

impl GammaConfig {
    pub fn new(kernel: InteractionKernel, n_outer: usize, n_inner: usize, master_seed: u64) -> Self {
        Self {
            kernel,
            buffer: 8,
            n_outer,
            n_inner,
            quadrature_order: 40,
            master_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaEstimate {
    pub gamma: f64,
    pub stderr: f64,
    pub qbar_used: f64,
    pub buffer: u32,
    pub n_outer: usize,
    pub n_inner: usize,
}

/// Lexicographic comparison with the origin: `true` for sites `≺ 0`.
fn precedes_origin(site: &[i64]) -> bool {
    for &x in site {
        if x != 0 {
            return x < 0;
        }
    }
    false
}

/// Nested estimator of
/// `Γ = E_{J_i, i⪰0} (E_{J'_0, J_i, i≺0} log⟨e^{β√q̄ (J'_0 - J_0) σ_0}⟩)²`
/// with the bracket taken in a box of half-width `buffer` around the origin.
/// `J'_0` is integrated by Gauss–Hermite, the past fields by `n_inner` draws,
/// and the square of the inner mean by its unbiased U-statistic.
pub fn estimate_gamma(kappa: f64, beta: f64, h: f64, qbar: f64, config: &GammaConfig) -> Result<GammaEstimate> {
    if !(0.0..=1.0).contains(&qbar) {
        return Err(Error::domain("qbar outside [0, 1]"));
    }
    if config.n_outer < 2 || config.n_inner < 2 {
        return Err(Error::domain("n_outer and n_inner must be at least 2"));
    }
    if config.quadrature_order < 40 {
        return Err(Error::domain("quadrature order must be at least 40"));
    }
    let report = uniqueness_check(&config.kernel, kappa)?;
    if !report.inside {
        return Err(Error::domain(format!(
            "kappa = {kappa} outside the uniqueness region (kappa1 = {})",
            report.kappa1
        )));
    }
    let xi = report.correlation_length().unwrap_or(f64::INFINITY);
    if (config.buffer as f64) < 3.0 * xi {
        return Err(Error::domain(format!(
            "buffer {} is below three correlation lengths ({:.3})",
            config.buffer, xi
        )));
    }
    let geometry = BoxGeometry::cube(config.kernel.dim(), config.buffer)?;
    let n = geometry.volume();
    let origin = geometry.center_index();
    let past: Vec<bool> = geometry.sites().iter().map(|s| precedes_origin(s)).collect();
    let gamma = beta * qbar.sqrt();
    let gh = GaussHermite::new(config.quadrature_order)?;
    let seeds = SeedDerivation::new(config.master_seed);
    let outer: Vec<f64> = (0..config.n_outer as u64)
        .into_par_iter()
        .map(|o| {
            if gamma == 0.0 {
                return Ok(0.0);
            }
            let mut rng = seeds.rng(StreamPurpose::Fields, &[o]);
            let present = standard_normals(&mut rng, n);
            let j0 = present[origin];
            let mut inner_rng = seeds.rng(StreamPurpose::SiteResample, &[o]);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut fields = present.clone();
            for _ in 0..config.n_inner {
                for (i, f) in fields.iter_mut().enumerate() {
                    if past[i] {
                        *f = inner_rng.sample(rand_distr::StandardNormal);
                    }
                }
                let m = exact::rfim_magnetizations(&geometry, &config.kernel, kappa, h, gamma, &fields)?;
                let m0 = m[origin];
                let g = gh.expect(|z| tilt_unchecked(gamma * (z - j0), m0));
                sum += g;
                sum_sq += g * g;
            }
            let k = config.n_inner as f64;
            Ok((sum * sum - sum_sq) / (k * (k - 1.0)))
        })
        .collect::<Result<_>>()?;
    Ok(GammaEstimate {
        gamma: stats::mean(&outer),
        stderr: stats::std_error(&outer),
        qbar_used: qbar,
        buffer: config.buffer,
        n_outer: config.n_outer,
        n_inner: config.n_inner,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariancePrediction {
    pub value: f64,
    pub stderr: f64,
    /// Set when the prediction is not strictly positive at `h ≠ 0`.
    pub nonpositive_warning: bool,
}

/// `Γ̂ - β² q̄² / 2`.
pub fn variance_prediction(gamma: &GammaEstimate, beta: f64, qbar: f64) -> VariancePrediction {
    let value = gamma.gamma - 0.5 * beta * beta * qbar * qbar;
    VariancePrediction {
        value,
        stderr: gamma.stderr,
        nonpositive_warning: value <= 0.0 && qbar > 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleConfig {
    pub quadrature_order: usize,
    /// Draws of the later fields per increment when `κ > 0`.
    pub n_inner: usize,
    pub master_seed: u64,
}

/// Largest box for the `κ > 0` increments.
pub const MARTINGALE_CAP: usize = 10;

/// `ξ_{n,k} = -n^{-1/2} E_{J'_k, J_ℓ:ℓ≻k} log⟨e^{(h'_k - h_k) σ_k}⟩` along the
/// lexicographic order of `geometry`, for the RFIM with fields `h + γ J_i`.
pub fn martingale_increments(
    fields: &[f64],
    kappa: f64,
    h: f64,
    gamma: f64,
    geometry: &BoxGeometry,
    kernel: &InteractionKernel,
    config: &MartingaleConfig,
) -> Result<Vec<f64>> {
    let n = geometry.volume();
    if fields.len() != n {
        return Err(Error::domain("field vector length does not match the box"));
    }
    if config.quadrature_order < 40 {
        return Err(Error::domain("quadrature order must be at least 40"));
    }
    let gh = GaussHermite::new(config.quadrature_order)?;
    let scale = 1.0 / (n as f64).sqrt();
    if gamma == 0.0 {
        return Ok(vec![0.0; n]);
    }
    if kappa == 0.0 || kernel.is_zero() {
        let mean = gh.expect(|z| log_2cosh(h + gamma * z));
        return Ok(fields.iter().map(|j| scale * (log_2cosh(h + gamma * j) - mean)).collect());
    }
    if n > MARTINGALE_CAP {
        return Err(Error::size(format!(
            "interacting martingale increments limited to {MARTINGALE_CAP} sites, got {n}"
        )));
    }
    if config.n_inner == 0 {
        return Err(Error::domain("n_inner must be positive"));
    }
    let seeds = SeedDerivation::new(config.master_seed);
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeds.rng(StreamPurpose::Auxiliary, &[k as u64]);
            let mut work = fields.to_vec();
            let mut acc = 0.0;
            for _ in 0..config.n_inner {
                for f in work.iter_mut().skip(k + 1) {
                    *f = rng.sample(rand_distr::StandardNormal);
                }
                let m = exact::rfim_magnetizations(geometry, kernel, kappa, h, gamma, &work)?;
                acc += gh.expect(|z| tilt_unchecked(gamma * (z - fields[k]), m[k]));
            }
            Ok(-scale * acc / config.n_inner as f64)
        })
        .collect()
}

/// `E_{J_k} ξ_{n,k}` at `κ = 0` by quadrature over `J_k`.
pub fn factorized_increment_mean(h: f64, gamma: f64, n: usize, order: usize) -> Result<f64> {
    let gh = GaussHermite::new(order)?;
    let mean = gh.expect(|z| log_2cosh(h + gamma * z));
    Ok(gh.expect(|j| (log_2cosh(h + gamma * j) - mean) / (n as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub volume: usize,
    pub variance: f64,
    pub variance_stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub slope: f64,
    pub slope_stderr: f64,
    /// All variances vanish; no slope.
    pub degenerate: bool,
}

/// Standard error of the unbiased sample variance from the fourth moment.
fn variance_stderr(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = stats::mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - (n - 3.0) / (n - 1.0) * m2 * m2) / n).max(0.0).sqrt()
}

/// Least-squares slope of `log Var(p_N)` against `log |Λ_N|`.
pub fn variance_scaling(
    geometries: &[BoxGeometry],
    model: &EnsembleModel,
    kernel: &InteractionKernel,
    n_samples: usize,
    master_seed: u64,
    engine: &Engine,
) -> Result<(ScalingReport, Vec<PressureEnsemble>)> {
    if geometries.len() < 3 {
        return Err(Error::domain("variance scaling needs at least three sizes"));
    }
    let ensembles = geometries
        .iter()
        .map(|g| ensemble_pressures(g, model, kernel, n_samples, master_seed, engine))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<ScalingRow> = ensembles
        .iter()
        .map(|e| ScalingRow {
            volume: e.volume,
            variance: e.variance,
            variance_stderr: variance_stderr(&e.values()),
        })
        .collect();
    let degenerate = rows.iter().any(|r| !(r.variance > 0.0));
    let (slope, slope_stderr) = if degenerate {
        (f64::NAN, f64::NAN)
    } else {
        let xs: Vec<f64> = rows.iter().map(|r| (r.volume as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.variance.ln()).collect();
        let (_, b, se) = stats::linear_fit(&xs, &ys);
        (b, se)
    };
    Ok((
        ScalingReport {
            rows,
            slope,
            slope_stderr,
            degenerate,
        },
        ensembles,
    ))
}
