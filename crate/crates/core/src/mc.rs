//! Single-spin-flip Metropolis sampling and thermodynamic integration.
//!
//! Chains target `exp(-s E(σ))` for a [`QuadraticForm`] `E`, sweeping sites in
//! lexicographic order. Each chain owns a ChaCha stream derived from the
//! master seed and a label path, so trajectories depend only on
//! `(seed, labels)` and never on scheduling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::disorder::{DisorderSample, SeedDerivation, StreamPurpose};
use crate::error::{Error, Result};
use crate::exact;
use crate::hamiltonians::{LocalFieldCache, ModelParams, QuadraticForm};
use crate::lattice::{BoxGeometry, InteractionKernel};
use crate::numerics::simpson_weights;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub burn_in: usize,
    pub n_sweeps: usize,
    /// Thermodynamic-integration nodes on `[0, 1]`.
    pub nodes: Vec<f64>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            burn_in: 1_000,
            n_sweeps: 10_000,
            nodes: uniform_nodes(21),
        }
    }
}

pub fn uniform_nodes(count: usize) -> Vec<f64> {
    (0..count).map(|k| k as f64 / (count - 1) as f64).collect()
}

/// Where a chain's random numbers come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainSeed {
    pub master_seed: u64,
    pub labels: Vec<u64>,
}

impl ChainSeed {
    pub fn new(master_seed: u64, labels: &[u64]) -> Self {
        Self {
            master_seed,
            labels: labels.to_vec(),
        }
    }

    pub fn child(&self, label: u64) -> Self {
        let mut labels = self.labels.clone();
        labels.push(label);
        Self {
            master_seed: self.master_seed,
            labels,
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        SeedDerivation::new(self.master_seed).rng(StreamPurpose::Chain, &self.labels)
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    cache: LocalFieldCache,
    energy: f64,
    sweep_count: u64,
    rng: ChaCha8Rng,
    seed: ChainSeed,
}

impl ChainState {
    /// Chain started from a uniformly random configuration.
    pub fn new(form: &QuadraticForm, seed: ChainSeed) -> Self {
        let mut rng = seed.rng();
        let spins: Vec<i8> = (0..form.len())
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        Self::from_spins(form, spins, rng, seed)
    }

    fn from_spins(form: &QuadraticForm, spins: Vec<i8>, rng: ChaCha8Rng, seed: ChainSeed) -> Self {
        let energy = form.energy_of(&spins);
        Self {
            cache: LocalFieldCache::new(form, spins),
            energy,
            sweep_count: 0,
            rng,
            seed,
        }
    }

    pub fn spins(&self) -> &[i8] {
        self.cache.spins()
    }

    pub fn local_fields(&self) -> &[f64] {
        self.cache.local_fields()
    }

    /// Energy `E(σ)` of the unscaled form, tracked through accepted flips.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn sweep_count(&self) -> u64 {
        self.sweep_count
    }

    pub fn seed(&self) -> &ChainSeed {
        &self.seed
    }

    pub fn drift(&self, form: &QuadraticForm) -> f64 {
        self.cache.drift(form)
    }

    /// One lexicographic Metropolis pass against `exp(-s E)`.
    pub fn sweep(&mut self, form: &QuadraticForm, s: f64) {
        for i in 0..form.len() {
            let delta = self.cache.flip_delta(i);
            let arg = s * delta;
            if arg <= 0.0 || self.rng.random::<f64>() < (-arg).exp() {
                self.cache.flip(form, i);
                self.energy += delta;
            }
        }
        self.sweep_count += 1;
        if self.sweep_count % 1024 == 0 {
            self.resync(form);
        }
    }

    fn resync(&mut self, form: &QuadraticForm) {
        self.cache = LocalFieldCache::new(form, self.cache.spins().to_vec());
        self.energy = form.energy_of(self.cache.spins());
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateWithError {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    /// Integrated autocorrelation time in sweeps.
    pub autocorrelation_time: f64,
}

impl EstimateWithError {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
            n_samples: 0,
            autocorrelation_time: 0.0,
        }
    }

    /// `|a - b| / sqrt(σ_a² + σ_b²)`; infinite when both errors vanish and
    /// the means differ.
    pub fn z_score(&self, other: f64, other_stderr: f64) -> f64 {
        let diff = (self.mean - other).abs();
        let se = (self.stderr.powi(2) + other_stderr.powi(2)).sqrt();
        if diff == 0.0 {
            0.0
        } else {
            diff / se
        }
    }
}

const MIN_BLOCKS: usize = 32;

/// Mean of a correlated series with a blocked standard error. Block length
/// doubles while at least 32 blocks remain; the largest error over those
/// levels is reported.
pub fn blocked_estimate(series: &[f64]) -> EstimateWithError {
    let n = series.len();
    let mean = stats::mean(series);
    let naive = stats::std_error(series);
    let mut best = naive;
    let mut level: Vec<f64> = series.to_vec();
    while level.len() / 2 >= MIN_BLOCKS {
        level = level.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
        best = best.max(stats::std_error(&level));
    }
    let tau = if naive > 0.0 { 0.5 * (best / naive).powi(2) } else { 0.0 };
    EstimateWithError {
        mean,
        stderr: best,
        n_samples: n,
        autocorrelation_time: tau,
    }
}

/// Time average of `obs` along one chain at scale `s`.
pub fn estimate_expectation(
    form: &QuadraticForm,
    s: f64,
    obs: impl Fn(&[i8]) -> f64,
    config: &McConfig,
    seed: ChainSeed,
) -> Result<EstimateWithError> {
    if config.n_sweeps == 0 {
        return Err(Error::domain("n_sweeps must be positive"));
    }
    let mut chain = ChainState::new(form, seed);
    for _ in 0..config.burn_in {
        chain.sweep(form, s);
    }
    let series: Vec<f64> = (0..config.n_sweeps)
        .map(|_| {
            chain.sweep(form, s);
            obs(chain.spins())
        })
        .collect();
    Ok(blocked_estimate(&series))
}

/// Time average of `obs(σ¹, σ²)` over two independent chains.
pub fn estimate_pair_expectation(
    form: &QuadraticForm,
    s: f64,
    obs: impl Fn(&[i8], &[i8]) -> f64,
    config: &McConfig,
    seed: ChainSeed,
) -> Result<EstimateWithError> {
    if config.n_sweeps == 0 {
        return Err(Error::domain("n_sweeps must be positive"));
    }
    let mut a = ChainState::new(form, seed.child(1));
    let mut b = ChainState::new(form, seed.child(2));
    for _ in 0..config.burn_in {
        a.sweep(form, s);
        b.sweep(form, s);
    }
    let series: Vec<f64> = (0..config.n_sweeps)
        .map(|_| {
            a.sweep(form, s);
            b.sweep(form, s);
            obs(a.spins(), b.spins())
        })
        .collect();
    Ok(blocked_estimate(&series))
}

/// Per-site magnetizations along one chain at scale 1.
pub fn estimate_magnetizations(
    form: &QuadraticForm,
    config: &McConfig,
    seed: ChainSeed,
) -> Result<Vec<EstimateWithError>> {
    if config.n_sweeps == 0 {
        return Err(Error::domain("n_sweeps must be positive"));
    }
    let n = form.len();
    let mut chain = ChainState::new(form, seed);
    for _ in 0..config.burn_in {
        chain.sweep(form, 1.0);
    }
    let mut series = vec![Vec::with_capacity(config.n_sweeps); n];
    for _ in 0..config.n_sweeps {
        chain.sweep(form, 1.0);
        for (i, &x) in chain.spins().iter().enumerate() {
            series[i].push(x as f64);
        }
    }
    Ok(series.iter().map(|s| blocked_estimate(s)).collect())
}

pub fn overlap_of(a: &[i8], b: &[i8]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x * y) as f64).sum::<f64>() / a.len() as f64
}

/// One integration node: `⟨-E⟩_s / |Λ|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrandPoint {
    pub s: f64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureEstimate {
    pub pressure: EstimateWithError,
    pub statistical_error: f64,
    pub quadrature_error: f64,
    pub trace: Vec<IntegrandPoint>,
}

/// `log 2 + ∫_0^1 |Λ|^{-1} ⟨-E⟩_s ds` with the integrand sampled by MC at
/// each node.
pub fn thermo_integration_form(
    form: &QuadraticForm,
    config: &McConfig,
    seed: &ChainSeed,
) -> Result<PressureEstimate> {
    let nodes = &config.nodes;
    let weights = simpson_weights(nodes)?;
    if nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
        return Err(Error::domain("integration nodes must span [0, 1]"));
    }
    let n = form.len() as f64;
    let trace: Vec<IntegrandPoint> = nodes
        .par_iter()
        .enumerate()
        .map(|(k, &s)| {
            let mut chain = ChainState::new(form, seed.child(k as u64));
            for _ in 0..config.burn_in {
                chain.sweep(form, s);
            }
            let series: Vec<f64> = (0..config.n_sweeps)
                .map(|_| {
                    chain.sweep(form, s);
                    -chain.energy() / n
                })
                .collect();
            let est = blocked_estimate(&series);
            IntegrandPoint {
                s,
                mean: est.mean,
                stderr: est.stderr,
            }
        })
        .collect();
    let integral: f64 = weights.iter().zip(&trace).map(|(w, p)| w * p.mean).sum();
    let stat = weights
        .iter()
        .zip(&trace)
        .map(|(w, p)| (w * p.stderr).powi(2))
        .sum::<f64>()
        .sqrt();
    // compare with the rule on every other node
    let quad = if (nodes.len() - 1) % 4 == 0 {
        let coarse: Vec<f64> = nodes.iter().step_by(2).copied().collect();
        let cw = simpson_weights(&coarse)?;
        let coarse_integral: f64 = cw.iter().zip(trace.iter().step_by(2)).map(|(w, p)| w * p.mean).sum();
        (integral - coarse_integral).abs()
    } else {
        0.0
    };
    let total = (stat * stat + quad * quad).sqrt();
    Ok(PressureEstimate {
        pressure: EstimateWithError {
            mean: std::f64::consts::LN_2 + integral,
            stderr: total,
            n_samples: config.n_sweeps * nodes.len(),
            autocorrelation_time: f64::NAN,
        },
        statistical_error: stat,
        quadrature_error: quad,
        trace,
    })
}

pub fn thermo_integration_pressure(
    geometry: &BoxGeometry,
    params: &ModelParams,
    sample: &DisorderSample,
    kernel: &InteractionKernel,
    config: &McConfig,
    seed: &ChainSeed,
) -> Result<PressureEstimate> {
    let form = QuadraticForm::interpolating(geometry, kernel, sample, params)?;
    thermo_integration_form(&form, config, seed)
}

/// Exact transition matrix of one lexicographic sweep at scale `s`,
/// row-major over configurations indexed by [`crate::hamiltonians::SpinConfiguration::to_bits`].
pub fn sweep_transition_matrix(form: &QuadraticForm, s: f64) -> Result<Vec<f64>> {
    let n = form.len();
    if n > 10 {
        return Err(Error::size("transition matrix limited to 10 spins"));
    }
    let states = 1usize << n;
    let spins = |bits: usize| -> Vec<i8> { (0..n).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect() };
    let mut p = identity(states);
    for i in 0..n {
        let mut site = vec![0.0; states * states];
        for a in 0..states {
            let delta = form.flip_delta(&spins(a), i);
            let acc = (-s * delta).exp().min(1.0);
            let b = a ^ (1 << i);
            site[a * states + b] = acc;
            site[a * states + a] = 1.0 - acc;
        }
        p = matmul(&p, &site, states);
    }
    Ok(p)
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let x = a[i * n + k];
            if x != 0.0 {
                for j in 0..n {
                    c[i * n + j] += x * b[k * n + j];
                }
            }
        }
    }
    c
}

/// `‖πP - π‖₁` for the exact Gibbs law `π ∝ exp(-s E)`.
pub fn stationarity_defect(form: &QuadraticForm, s: f64) -> Result<f64> {
    let p = sweep_transition_matrix(form, s)?;
    let states = 1usize << form.len();
    let logw: Vec<f64> = (0..states)
        .map(|a| {
            let sp: Vec<i8> = (0..form.len()).map(|i| if a >> i & 1 == 1 { 1 } else { -1 }).collect();
            -s * form.energy_of(&sp)
        })
        .collect();
    let lz = crate::numerics::log_sum_exp(&logw);
    let pi: Vec<f64> = logw.iter().map(|l| (l - lz).exp()).collect();
    Ok((0..states)
        .map(|j| {
            let flow: f64 = (0..states).map(|i| pi[i] * p[i * states + j]).sum();
            (flow - pi[j]).abs()
        })
        .sum())
}

/// How overlap and magnetization expectations are computed.
#[derive(Debug, Clone, PartialEq)]
pub enum Engine {
    Exact,
    MonteCarlo(McConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub volume: usize,
    /// `|Λ| · E⟨(q_12 - q̄)²⟩_t^{⊗2}`
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// Slope of `log value` against `log |Λ|`.
    pub slope: f64,
    pub bounded: bool,
}

/// `|Λ_N| E⟨(q_12 - q̄)²⟩_t^{⊗2}` across sizes; bounded when the log-log
/// slope is at most 0.2.
#[allow(clippy::too_many_arguments)]
pub fn overlap_concentration_probe(
    t: f64,
    qbar: f64,
    geometries: &[BoxGeometry],
    params: &ModelParams,
    kernel: &InteractionKernel,
    n_samples: usize,
    master_seed: u64,
    engine: &Engine,
) -> Result<ProbeReport> {
    if n_samples < 2 {
        return Err(Error::domain("need at least two disorder samples"));
    }
    let p = params.clone().with_t(t).with_q(qbar);
    let rows = geometries
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let n = g.volume();
            let values: Vec<f64> = (0..n_samples as u64)
                .into_par_iter()
                .map(|idx| {
                    let sample = crate::disorder::sample_disorder(g, master_seed, idx);
                    let form = QuadraticForm::interpolating(g, kernel, &sample, &p)?;
                    let m2 = match engine {
                        Engine::Exact => {
                            let (m1, m2) = exact::product_overlap_moments(&form)?;
                            m2 - 2.0 * qbar * m1 + qbar * qbar
                        }
                        Engine::MonteCarlo(cfg) => {
                            estimate_pair_expectation(
                                &form,
                                1.0,
                                |a, b| (overlap_of(a, b) - qbar).powi(2),
                                cfg,
                                ChainSeed::new(master_seed, &[gi as u64, idx]),
                            )?
                            .mean
                        }
                    };
                    Ok(n as f64 * m2)
                })
                .collect::<Result<_>>()?;
            Ok(ProbeRow {
                volume: n,
                value: stats::mean(&values),
                stderr: stats::std_error(&values),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let slope = if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| (r.volume as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.value.ln()).collect();
        stats::linear_fit(&xs, &ys).1
    } else {
        0.0
    };
    Ok(ProbeReport {
        bounded: slope <= 0.2,
        rows,
        slope,
    })
}
