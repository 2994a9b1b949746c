//! Exact evaluation by enumeration and, for nearest-neighbor chains, by
//! transfer matrices. This is the reference every other engine is checked
//! against.
//!
//! Single-replica sums visit configurations in Gray-code order with cached
//! local fields. Two-replica measures are enumerated over pair states and
//! condensed into an [`OverlapSpectrum`]: the Boltzmann mass of pairs at each
//! Hamming distance, from which every overlap-dependent coupling or tilt
//! follows.

use rayon::prelude::*;

use crate::disorder::DisorderSample;
use crate::error::{Error, Result};
use crate::hamiltonians::{LocalFieldCache, ModelParams, QuadraticForm};
use crate::lattice::{BoxGeometry, InteractionKernel};
use crate::numerics::{log_2cosh, LogSumExp};
use crate::stats;

/// Largest single-replica system enumerated.
pub const ENUMERATION_CAP: usize = 24;
/// Largest replica size for pair-state enumeration.
pub const PAIR_CAP: usize = 12;

const RESYNC_EVERY: u64 = 1 << 12;

fn check_cap(n: usize, cap: usize, what: &str) -> Result<()> {
    if n > cap {
        return Err(Error::size(format!(
            "{what}: {n} spins exceed the enumeration cap of {cap}; use the Monte Carlo engine"
        )));
    }
    Ok(())
}

/// Visit every configuration with its energy, in Gray-code order.
pub fn for_each_state(form: &QuadraticForm, mut visit: impl FnMut(&[i8], f64)) -> Result<()> {
    let n = form.len();
    check_cap(n, ENUMERATION_CAP, "enumeration")?;
    let mut cache = LocalFieldCache::new(form, vec![-1; n]);
    let mut energy = form.energy_of(cache.spins());
    visit(cache.spins(), energy);
    for k in 1u64..(1u64 << n) {
        let i = k.trailing_zeros() as usize;
        energy += cache.flip_delta(i);
        cache.flip(form, i);
        if k % RESYNC_EVERY == 0 {
            cache = LocalFieldCache::new(form, cache.spins().to_vec());
            energy = form.energy_of(cache.spins());
        }
        visit(cache.spins(), energy);
    }
    Ok(())
}

/// `log Σ_σ exp(-E(σ))`.
pub fn log_partition(form: &QuadraticForm) -> Result<f64> {
    if !form.has_couplings() {
        // independent spins
        return Ok(form.fields().iter().map(|&b| log_2cosh(b)).sum::<f64>() - form.offset());
    }
    let mut acc = LogSumExp::new();
    for_each_state(form, |_, e| acc.push(-e))?;
    Ok(acc.value())
}

/// Gibbs averages of `k` observables evaluated jointly by `obs`.
pub fn expectations(
    form: &QuadraticForm,
    k: usize,
    mut obs: impl FnMut(&[i8], &mut [f64]),
) -> Result<(f64, Vec<f64>)> {
    let log_z = {
        let mut acc = LogSumExp::new();
        for_each_state(form, |_, e| acc.push(-e))?;
        acc.value()
    };
    let mut sums = vec![0.0; k];
    let mut scratch = vec![0.0; k];
    for_each_state(form, |s, e| {
        let w = (-e - log_z).exp();
        if w == 0.0 {
            return;
        }
        obs(s, &mut scratch);
        for (acc, v) in sums.iter_mut().zip(&scratch) {
            *acc += w * v;
        }
    })?;
    Ok((log_z, sums))
}

/// `⟨A⟩` for a single observable.
pub fn expectation(form: &QuadraticForm, obs: impl Fn(&[i8]) -> f64) -> Result<f64> {
    Ok(expectations(form, 1, |s, out| out[0] = obs(s))?.1[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsSummary {
    pub log_partition: f64,
    pub pressure: f64,
    pub magnetizations: Vec<f64>,
}

pub fn gibbs_summary(form: &QuadraticForm) -> Result<GibbsSummary> {
    let n = form.len();
    let (log_z, m) = if form.has_couplings() {
        expectations(form, n, |s, out| {
            for (o, &x) in out.iter_mut().zip(s) {
                *o = x as f64;
            }
        })?
    } else {
        (log_partition(form)?, form.fields().iter().map(|b| b.tanh()).collect())
    };
    Ok(GibbsSummary {
        log_partition: log_z,
        pressure: log_z / n as f64,
        magnetizations: m,
    })
}

/// Magnetizations and correlation matrix `⟨σ_i σ_j⟩` (row-major).
pub fn one_and_two_point(form: &QuadraticForm) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = form.len();
    let (_, v) = expectations(form, n + n * n, |s, out| {
        for i in 0..n {
            out[i] = s[i] as f64;
            for j in 0..n {
                out[n + i * n + j] = (s[i] * s[j]) as f64;
            }
        }
    })?;
    Ok((v[..n].to_vec(), v[n..].to_vec()))
}

/// `log Z_N` of the interpolating model at `params` (`t = 1` is the full model).
pub fn partition_function(
    geometry: &BoxGeometry,
    params: &ModelParams,
    sample: &DisorderSample,
    kernel: &InteractionKernel,
) -> Result<f64> {
    check_cap(geometry.volume(), ENUMERATION_CAP, "partition_function")?;
    log_partition(&QuadraticForm::interpolating(geometry, kernel, sample, params)?)
}

pub fn pressure(
    geometry: &BoxGeometry,
    params: &ModelParams,
    sample: &DisorderSample,
    kernel: &InteractionKernel,
) -> Result<f64> {
    Ok(partition_function(geometry, params, sample, kernel)? / geometry.volume() as f64)
}

/// `log Σ_σ exp(-κ H^I + Σ σ_i (h + γ J_i))` by enumeration.
pub fn rfim_partition(
    geometry: &BoxGeometry,
    kappa: f64,
    h: f64,
    gamma: f64,
    fields: &[f64],
    kernel: &InteractionKernel,
) -> Result<f64> {
    check_cap(geometry.volume(), ENUMERATION_CAP, "rfim_partition")?;
    log_partition(&QuadraticForm::rfim(geometry, kernel, kappa, h, gamma, fields)?)
}

/// `log Z` of the free chain `J Σ σ_i σ_{i+1} + Σ b_i σ_i`.
pub fn chain_log_partition(coupling: f64, fields: &[f64]) -> f64 {
    let (ep, em) = (coupling.exp(), (-coupling).exp());
    let mut log_scale = 0.0;
    let mut up = fields[0].exp();
    let mut down = (-fields[0]).exp();
    for &b in &fields[1..] {
        let s = up + down;
        log_scale += s.ln();
        let (u, d) = (up / s, down / s);
        up = (u * ep + d * em) * b.exp();
        down = (u * em + d * ep) * (-b).exp();
    }
    log_scale + (up + down).ln()
}

/// Site magnetizations of the free chain by forward-backward recursion.
pub fn chain_magnetizations(coupling: f64, fields: &[f64]) -> Vec<f64> {
    let n = fields.len();
    let (ep, em) = (coupling.exp(), (-coupling).exp());
    // forward messages include the site's own field, normalized
    let mut fwd = vec![(0.0, 0.0); n];
    let (u, d) = (fields[0].exp(), (-fields[0]).exp());
    fwd[0] = (u / (u + d), d / (u + d));
    for i in 1..n {
        let (pu, pd) = fwd[i - 1];
        let u = (pu * ep + pd * em) * fields[i].exp();
        let d = (pu * em + pd * ep) * (-fields[i]).exp();
        fwd[i] = (u / (u + d), d / (u + d));
    }
    let mut out = vec![0.0; n];
    let mut back = (0.5, 0.5);
    for i in (0..n).rev() {
        let (fu, fd) = fwd[i];
        let (bu, bd) = back;
        let (a, b) = (fu * bu, fd * bd);
        out[i] = (a - b) / (a + b);
        if i > 0 {
            let (xu, xd) = (bu * fields[i].exp(), bd * (-fields[i]).exp());
            let u = ep * xu + em * xd;
            let d = em * xu + ep * xd;
            back = (u / (u + d), d / (u + d));
        }
    }
    out
}

fn chain_coupling(kernel: &InteractionKernel, kappa: f64) -> Result<f64> {
    if !kernel.is_chain_nearest_neighbor() {
        return Err(Error::Unsupported(
            "transfer matrix needs a one-dimensional nearest-neighbor kernel".into(),
        ));
    }
    Ok(kappa * kernel.value(&[1]))
}

/// Exact RFIM pressure `|Λ|^{-1} log Z` of a free chain.
pub fn transfer_matrix_rfim_pressure(
    kernel: &InteractionKernel,
    kappa: f64,
    h: f64,
    gamma: f64,
    fields: &[f64],
) -> Result<f64> {
    let coupling = chain_coupling(kernel, kappa)?;
    if fields.is_empty() {
        return Err(Error::domain("empty chain"));
    }
    let b: Vec<f64> = fields.iter().map(|j| h + gamma * j).collect();
    Ok(chain_log_partition(coupling, &b) / b.len() as f64)
}

/// Which exact route evaluates an RFIM box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfimRoute {
    Factorized,
    TransferMatrix,
    Enumeration,
}

pub fn rfim_route(geometry: &BoxGeometry, kernel: &InteractionKernel, kappa: f64) -> Result<RfimRoute> {
    if kappa == 0.0 || kernel.is_zero() {
        Ok(RfimRoute::Factorized)
    } else if kernel.is_chain_nearest_neighbor() && geometry.dim() == 1 {
        Ok(RfimRoute::TransferMatrix)
    } else {
        check_cap(geometry.volume(), ENUMERATION_CAP, "RFIM box")?;
        Ok(RfimRoute::Enumeration)
    }
}

/// Exact RFIM pressure by the cheapest applicable route.
pub fn rfim_pressure_exact(
    geometry: &BoxGeometry,
    kernel: &InteractionKernel,
    kappa: f64,
    h: f64,
    gamma: f64,
    fields: &[f64],
) -> Result<f64> {
    let n = geometry.volume() as f64;
    match rfim_route(geometry, kernel, kappa)? {
        RfimRoute::Factorized => Ok(fields.iter().map(|j| log_2cosh(h + gamma * j)).sum::<f64>() / n),
        RfimRoute::TransferMatrix => transfer_matrix_rfim_pressure(kernel, kappa, h, gamma, fields),
        RfimRoute::Enumeration => Ok(rfim_partition(geometry, kappa, h, gamma, fields, kernel)? / n),
    }
}

/// Exact RFIM magnetizations by the cheapest applicable route.
pub fn rfim_magnetizations(
    geometry: &BoxGeometry,
    kernel: &InteractionKernel,
    kappa: f64,
    h: f64,
    gamma: f64,
    fields: &[f64],
) -> Result<Vec<f64>> {
    let b: Vec<f64> = fields.iter().map(|j| h + gamma * j).collect();
    match rfim_route(geometry, kernel, kappa)? {
        RfimRoute::Factorized => Ok(b.iter().map(|x| x.tanh()).collect()),
        RfimRoute::TransferMatrix => Ok(chain_magnetizations(chain_coupling(kernel, kappa)?, &b)),
        RfimRoute::Enumeration => Ok(gibbs_summary(&QuadraticForm::rfim(
            geometry, kernel, kappa, h, gamma, fields,
        )?)?
        .magnetizations),
    }
}

/// Exponent added to pair states as a function of the overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OverlapTilt {
    None,
    /// `+ strength · |Λ| · (q_12 - center)^2`; the replica coupling uses
    /// `strength = β² λ / 2`.
    Quadratic { strength: f64, center: f64 },
    /// `+ μ |Λ| (q_12 - center)`.
    Linear { mu: f64, center: f64 },
}

impl OverlapTilt {
    pub fn exponent(&self, q12: f64, n: usize) -> f64 {
        let n = n as f64;
        match *self {
            OverlapTilt::None => 0.0,
            OverlapTilt::Quadratic { strength, center } => strength * n * (q12 - center).powi(2),
            OverlapTilt::Linear { mu, center } => mu * n * (q12 - center),
        }
    }
}

/// Which Gibbs measure an expectation is taken under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    /// `⟨·⟩_t`
    Single,
    /// `⟨·⟩_t^{⊗2}`
    Product,
    /// `⟨·⟩_{t,λ}`, the coupled replicas
    Coupled,
    /// `⟨·⟩^{(μ)}`, two RFIM replicas at `γ = β√q` tilted by `e^{μ|Λ|(q_12-q)}`
    Tilted,
}

/// Energy and overlap tilt of the selected measure; `params` supplies
/// `t, q, λ, μ`.
pub fn measure_setup(
    kind: MeasureKind,
    geometry: &BoxGeometry,
    params: &ModelParams,
    sample: &DisorderSample,
    kernel: &InteractionKernel,
) -> Result<(QuadraticForm, OverlapTilt)> {
    params.validate()?;
    match kind {
        MeasureKind::Single | MeasureKind::Product => Ok((
            QuadraticForm::interpolating(geometry, kernel, sample, params)?,
            OverlapTilt::None,
        )),
        MeasureKind::Coupled => Ok((
            QuadraticForm::interpolating(geometry, kernel, sample, params)?,
            OverlapTilt::Quadratic {
                strength: 0.5 * params.beta.powi(2) * params.lambda,
                center: params.q,
            },
        )),
        MeasureKind::Tilted => Ok((
            QuadraticForm::rfim(
                geometry,
                kernel,
                params.kappa,
                params.h,
                params.beta * params.q.sqrt(),
                sample.fields(),
            )?,
            OverlapTilt::Linear {
                mu: params.mu,
                center: params.q,
            },
        )),
    }
}

fn config_energies(form: &QuadraticForm) -> Result<Vec<f64>> {
    let n = form.len();
    check_cap(n, PAIR_CAP, "pair-state enumeration")?;
    Ok((0..1u64 << n)
        .map(|bits| {
            let s: Vec<i8> = (0..n).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect();
            form.energy_of(&s)
        })
        .collect())
}

/// Direct pair-state average of `obs(σ¹, σ²)` under
/// `exp(-E(σ¹) - E(σ²) + tilt(q_12))`.
pub fn pair_expectation(
    form: &QuadraticForm,
    tilt: OverlapTilt,
    obs: impl Fn(&[i8], &[i8]) -> f64,
) -> Result<f64> {
    let n = form.len();
    let energies = config_energies(form)?;
    let configs: Vec<Vec<i8>> = (0..1u64 << n)
        .map(|bits| (0..n).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect())
        .collect();
    let exponent = |a: usize, b: usize| {
        let d = ((a ^ b) as u64).count_ones() as usize;
        let q12 = 1.0 - 2.0 * d as f64 / n as f64;
        -energies[a] - energies[b] + tilt.exponent(q12, n)
    };
    let mut acc = LogSumExp::new();
    for a in 0..configs.len() {
        for b in 0..configs.len() {
            acc.push(exponent(a, b));
        }
    }
    let log_z = acc.value();
    let mut sum = 0.0;
    for a in 0..configs.len() {
        for b in 0..configs.len() {
            let w = (exponent(a, b) - log_z).exp();
            if w > 0.0 {
                sum += w * obs(&configs[a], &configs[b]);
            }
        }
    }
    Ok(sum)
}

/// Boltzmann mass of untilted pair states by Hamming distance `d`, i.e. by
/// overlap `q_12 = 1 - 2d/|Λ|`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapSpectrum {
    n: usize,
    log_mass: Vec<f64>,
}

impl OverlapSpectrum {
    pub fn new(form: &QuadraticForm) -> Result<Self> {
        let n = form.len();
        let energies = config_energies(form)?;
        let shift = energies.iter().map(|e| -e).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = energies.iter().map(|e| (-e - shift).exp()).collect();
        let mut mass = vec![0.0; n + 1];
        for (a, &wa) in w.iter().enumerate() {
            if wa == 0.0 {
                continue;
            }
            for (b, &wb) in w.iter().enumerate() {
                mass[((a ^ b) as u64).count_ones() as usize] += wa * wb;
            }
        }
        let log_mass = mass.iter().map(|m| m.ln() + 2.0 * shift).collect();
        Ok(Self { n, log_mass })
    }

    pub fn volume(&self) -> usize {
        self.n
    }

    pub fn overlap_at(&self, d: usize) -> f64 {
        1.0 - 2.0 * d as f64 / self.n as f64
    }

    /// `log Σ exp(tilt)` over pair states.
    pub fn log_partition(&self, tilt: OverlapTilt) -> f64 {
        let mut acc = LogSumExp::new();
        for (d, lm) in self.log_mass.iter().enumerate() {
            acc.push(lm + tilt.exponent(self.overlap_at(d), self.n));
        }
        acc.value()
    }

    /// `⟨f(q_12)⟩` under the tilted pair measure.
    pub fn expect(&self, tilt: OverlapTilt, f: impl Fn(f64) -> f64) -> f64 {
        let log_z = self.log_partition(tilt);
        self.log_mass
            .iter()
            .enumerate()
            .map(|(d, lm)| {
                let q = self.overlap_at(d);
                let w = (lm + tilt.exponent(q, self.n) - log_z).exp();
                if w == 0.0 {
                    0.0
                } else {
                    w * f(q)
                }
            })
            .sum()
    }
}

/// `⟨obs⟩` under the selected measure. Single-replica observables use the
/// first slice only; `Product` factorizes through single-replica enumeration
/// when `obs` only needs `σ¹`.
pub fn gibbs_expectation(
    obs: impl Fn(&[i8], &[i8]) -> f64,
    kind: MeasureKind,
    geometry: &BoxGeometry,
    params: &ModelParams,
    sample: &DisorderSample,
    kernel: &InteractionKernel,
) -> Result<f64> {
    let (form, tilt) = measure_setup(kind, geometry, params, sample, kernel)?;
    match kind {
        MeasureKind::Single => expectation(&form, |s| obs(s, s)),
        _ => pair_expectation(&form, tilt, obs),
    }
}

/// `⟨(q_12 - center)^order⟩` for `order ∈ {1, 2}` under a two-replica measure.
pub fn overlap_moment(
    order: u32,
    center: f64,
    kind: MeasureKind,
    geometry: &BoxGeometry,
    params: &ModelParams,
    sample: &DisorderSample,
    kernel: &InteractionKernel,
) -> Result<f64> {
    if !(order == 1 || order == 2) {
        return Err(Error::domain("overlap moment order must be 1 or 2"));
    }
    if kind == MeasureKind::Single {
        return Err(Error::domain("overlap moments need a two-replica measure"));
    }
    let (form, tilt) = measure_setup(kind, geometry, params, sample, kernel)?;
    if kind == MeasureKind::Product {
        let (m1, m2) = product_overlap_moments(&form)?;
        return Ok(match order {
            1 => m1 - center,
            _ => m2 - 2.0 * center * m1 + center * center,
        });
    }
    let spectrum = OverlapSpectrum::new(&form)?;
    Ok(spectrum.expect(tilt, |q| (q - center).powi(order as i32)))
}

/// `(⟨q_12⟩, ⟨q_12²⟩)` under the product measure from one- and two-point
/// functions of a single replica.
pub fn product_overlap_moments(form: &QuadraticForm) -> Result<(f64, f64)> {
    let n = form.len() as f64;
    let (m, c) = one_and_two_point(form)?;
    let first = m.iter().map(|x| x * x).sum::<f64>() / n;
    let second = c.iter().map(|x| x * x).sum::<f64>() / (n * n);
    Ok((first, second))
}

/// `log Z^{(2)}(t, λ)`.
pub fn coupled_partition(
    t: f64,
    lambda: f64,
    q: f64,
    geometry: &BoxGeometry,
    params: &ModelParams,
    sample: &DisorderSample,
    kernel: &InteractionKernel,
) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::domain("lambda must be >= 0"));
    }
    let p = params.clone().with_t(t).with_q(q).with_lambda(lambda);
    let (form, tilt) = measure_setup(MeasureKind::Coupled, geometry, &p, sample, kernel)?;
    Ok(OverlapSpectrum::new(&form)?.log_partition(tilt))
}

/// `α_N(μ;J) = (2|Λ|)^{-1} log ⟨exp(μ|Λ|(q_12 - q))⟩^{⊗2}` for two RFIM
/// replicas at `(κ, γ)`.
pub fn replica_generating_function(
    mu: f64,
    q: f64,
    geometry: &BoxGeometry,
    kappa: f64,
    h: f64,
    gamma: f64,
    fields: &[f64],
    kernel: &InteractionKernel,
) -> Result<f64> {
    let form = QuadraticForm::rfim(geometry, kernel, kappa, h, gamma, fields)?;
    let spectrum = OverlapSpectrum::new(&form)?;
    Ok(generating_function_from_spectrum(&spectrum, mu, q))
}

pub fn generating_function_from_spectrum(spectrum: &OverlapSpectrum, mu: f64, q: f64) -> f64 {
    let n = spectrum.volume();
    (spectrum.log_partition(OverlapTilt::Linear { mu, center: q })
        - spectrum.log_partition(OverlapTilt::None))
        / (2.0 * n as f64)
}

/// `d/dt log Z(t) = ⟨-∂_t H^(t)⟩_t` together with `⟨(q_12 - q)^2⟩_t^{⊗2}`.
pub fn interpolation_derivative(
    geometry: &BoxGeometry,
    params: &ModelParams,
    sample: &DisorderSample,
    kernel: &InteractionKernel,
) -> Result<(f64, f64)> {
    let form = QuadraticForm::interpolating(geometry, kernel, sample, params)?;
    let deriv = QuadraticForm::interpolation_t_derivative(sample, params)?;
    let n = form.len();
    let (_, v) = expectations(&form, 1 + n + n * n, |s, out| {
        out[0] = -deriv.energy_of(s);
        for i in 0..n {
            out[1 + i] = s[i] as f64;
            for j in 0..n {
                out[1 + n + i * n + j] = (s[i] * s[j]) as f64;
            }
        }
    })?;
    let nf = n as f64;
    let m1 = v[1..1 + n].iter().map(|x| x * x).sum::<f64>() / nf;
    let m2 = v[1 + n..].iter().map(|x| x * x).sum::<f64>() / (nf * nf);
    let q = params.q;
    Ok((v[0], m2 - 2.0 * q * m1 + q * q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativePoint {
    pub t: f64,
    /// Largest per-sample relative gap between the analytic derivative of
    /// `log Z(t)` and its central finite difference.
    pub max_relative_error: f64,
    /// Disorder mean of `d/dt p_N(t)`.
    pub mean_derivative: f64,
    /// Disorder mean of `β²/4 (1-q)² - β²/4 ⟨(q_12-q)²⟩_t^{⊗2}`.
    pub mean_prediction: f64,
    pub mean_residual: f64,
    pub residual_stderr: f64,
}

impl DerivativePoint {
    pub fn residual_within(&self, n_stderr: f64) -> bool {
        self.mean_residual.abs() <= n_stderr * self.residual_stderr
    }
}

/// Compare the analytic `t`-derivative with finite differences per sample,
/// and the disorder-averaged derivative with the overlap formula.
pub fn interpolation_derivative_check(
    t_grid: &[f64],
    fd_step: f64,
    geometry: &BoxGeometry,
    params: &ModelParams,
    samples: &[DisorderSample],
    kernel: &InteractionKernel,
) -> Result<Vec<DerivativePoint>> {
    if samples.is_empty() {
        return Err(Error::domain("no disorder samples"));
    }
    let n = geometry.volume() as f64;
    let beta2 = params.beta.powi(2);
    let q = params.q;
    t_grid
        .iter()
        .map(|&t| {
            if !(t > 0.0 && t < 1.0) || t - fd_step <= 0.0 || t + fd_step >= 1.0 {
                return Err(Error::domain(format!(
                    "t = {t} must lie in the open interval (0,1) with room for the difference step"
                )));
            }
            let p = params.clone().with_t(t);
            let rows: Vec<(f64, f64, f64)> = samples
                .par_iter()
                .map(|s| {
                    let (analytic, m2) = interpolation_derivative(geometry, &p, s, kernel)?;
                    let up = partition_function(geometry, &p.clone().with_t(t + fd_step), s, kernel)?;
                    let down = partition_function(geometry, &p.clone().with_t(t - fd_step), s, kernel)?;
                    let fd = (up - down) / (2.0 * fd_step);
                    let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-300);
                    let rel = if analytic == fd { 0.0 } else { rel };
                    Ok((rel, analytic / n, m2))
                })
                .collect::<Result<_>>()?;
            let derivs: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let preds: Vec<f64> = rows
                .iter()
                .map(|r| 0.25 * beta2 * (1.0 - q).powi(2) - 0.25 * beta2 * r.2)
                .collect();
            let resid: Vec<f64> = derivs.iter().zip(&preds).map(|(d, p)| d - p).collect();
            Ok(DerivativePoint {
                t,
                max_relative_error: rows.iter().map(|r| r.0).fold(0.0, f64::max),
                mean_derivative: stats::mean(&derivs),
                mean_prediction: stats::mean(&preds),
                mean_residual: stats::mean(&resid),
                residual_stderr: stats::std_error(&resid),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::{sample_disorder, sample_fields};
    use crate::hamiltonians::{interpolating_energy, overlap, SkDiagonal, SpinConfiguration};
    use crate::numerics::log_sum_exp;
    use proptest::prelude::*;

    fn nn1() -> InteractionKernel {
        InteractionKernel::nearest_neighbor(1, 1.0).unwrap()
    }

    /// Independent oracle: explicit configuration list, direct energies,
    /// normalized probabilities.
    fn brute_log_z(g: &BoxGeometry, p: &ModelParams, s: &DisorderSample, k: &InteractionKernel) -> f64 {
        let n = g.volume();
        let xs: Vec<f64> = (0..1u64 << n)
            .map(|b| -interpolating_energy(&SpinConfiguration::from_bits(n, b), p, s, k, g).unwrap())
            .collect();
        log_sum_exp(&xs)
    }

    #[test]
    fn free_spins() {
        let g = BoxGeometry::cube(1, 2).unwrap();
        let s = sample_disorder(&g, 1, 0);
        for h in [0.0, 0.5, 1.0, 2.0] {
            let p = ModelParams::new(0.0, 0.0, h);
            let lz = partition_function(&g, &p, &s, &nn1()).unwrap();
            assert!((lz - 5.0 * log_2cosh(h)).abs() < 1e-12);
            let pr = pressure(&g, &p, &s, &nn1()).unwrap();
            assert!((pr - (2.0 * h.cosh()).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn three_site_ising_hand_sum() {
        // h = β = 0: Σ over 8 states of exp(κ(σ1σ2 + σ2σ3)) = 2 (2 cosh κ)^2
        let g = BoxGeometry::cube(1, 1).unwrap();
        let s = sample_disorder(&g, 1, 0);
        for kappa in [0.0, 0.3, 1.7] {
            let lz = partition_function(&g, &ModelParams::new(kappa, 0.0, 0.0), &s, &nn1()).unwrap();
            assert!((lz - (2.0 * (2.0 * f64::cosh(kappa)).powi(2)).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_site_with_diagonal() {
        let g = BoxGeometry::cube(1, 0).unwrap();
        let s = DisorderSample::from_parts(vec![0.8], vec![0.3], 0, 0).unwrap();
        let p = ModelParams::new(0.0, 1.3, 0.4);
        let lz = partition_function(&g, &p, &s, &nn1()).unwrap();
        assert!((lz - (log_2cosh(0.4) + 1.3 * 0.8 / 2f64.sqrt())).abs() < 1e-14);
        let ex = p.with_sk_diagonal(SkDiagonal::Excluded);
        assert!((partition_function(&g, &ex, &s, &nn1()).unwrap() - log_2cosh(0.4)).abs() < 1e-14);
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let g = BoxGeometry::chain(10).unwrap();
        let k = InteractionKernel::exponential(1, 1.0, 0.8, 3).unwrap();
        for idx in 0..3 {
            let s = sample_disorder(&g, 21, idx);
            let p = ModelParams::new(0.4, 0.9, 0.3).with_t(0.7).with_q(0.2);
            let a = pressure(&g, &p, &s, &k).unwrap();
            let b = brute_log_z(&g, &p, &s, &k) / 10.0;
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn cap_enforced() {
        let g = BoxGeometry::chain(25).unwrap();
        let s = sample_disorder(&g, 1, 0);
        let err = partition_function(&g, &ModelParams::new(0.1, 0.1, 0.1), &s, &nn1()).unwrap_err();
        assert!(matches!(err, Error::Size(_)));
    }

    #[test]
    fn rfim_special_cases() {
        let g = BoxGeometry::chain(8).unwrap();
        let f = sample_fields(8, 4, 0);
        let k = nn1();
        let lz = rfim_partition(&g, 0.0, 0.3, 0.7, &f, &k).unwrap();
        let fact: f64 = f.iter().map(|j| log_2cosh(0.3 + 0.7 * j)).sum();
        assert!((lz - fact).abs() < 1e-12);
        let s = sample_disorder(&g, 4, 0);
        let ising = partition_function(&g, &ModelParams::new(0.6, 0.0, 0.3), &s, &k).unwrap();
        assert!((rfim_partition(&g, 0.6, 0.3, 0.0, &f, &k).unwrap() - ising).abs() < 1e-12);
        let tm = transfer_matrix_rfim_pressure(&k, 0.6, 0.3, 0.7, &f).unwrap();
        assert!((rfim_partition(&g, 0.6, 0.3, 0.7, &f, &k).unwrap() / 8.0 - tm).abs() < 1e-10);
    }

    #[test]
    fn transfer_matrix_cases() {
        let k = nn1();
        assert!((transfer_matrix_rfim_pressure(&k, 0.5, 0.2, 0.9, &[0.4]).unwrap() - log_2cosh(0.2 + 0.36)).abs() < 1e-15);
        let f = sample_fields(10, 8, 0);
        let tm = transfer_matrix_rfim_pressure(&k, 0.0, 0.2, 0.9, &f).unwrap();
        let fact = f.iter().map(|j| log_2cosh(0.2 + 0.9 * j)).sum::<f64>() / 10.0;
        assert!((tm - fact).abs() < 1e-14);
        let g = BoxGeometry::chain(10).unwrap();
        let tm = transfer_matrix_rfim_pressure(&k, 0.8, -0.2, 1.1, &f).unwrap();
        let en = rfim_partition(&g, 0.8, -0.2, 1.1, &f, &k).unwrap() / 10.0;
        assert!((tm - en).abs() < 1e-10);
        let k2 = InteractionKernel::exponential(1, 1.0, 1.0, 2).unwrap();
        assert!(matches!(
            transfer_matrix_rfim_pressure(&k2, 0.1, 0.0, 1.0, &f),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn chain_magnetizations_match_enumeration() {
        let g = BoxGeometry::chain(9).unwrap();
        let f = sample_fields(9, 12, 3);
        let k = nn1();
        let tm = chain_magnetizations(0.7, &f.iter().map(|j| 0.1 + 0.8 * j).collect::<Vec<_>>());
        let form = QuadraticForm::rfim(&g, &k, 0.7, 0.1, 0.8, &f).unwrap();
        let ex = gibbs_summary(&form).unwrap().magnetizations;
        for (a, b) in tm.iter().zip(&ex) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn expectations_independent_spins() {
        let g = BoxGeometry::chain(5).unwrap();
        let s = sample_disorder(&g, 2, 0);
        let p = ModelParams::new(0.0, 0.0, 0.7);
        let k = nn1();
        let m = gibbs_expectation(|a, _| a[2] as f64, MeasureKind::Single, &g, &p, &s, &k).unwrap();
        assert!((m - 0.7f64.tanh()).abs() < 1e-12);
        let q = overlap_moment(1, 0.0, MeasureKind::Product, &g, &p, &s, &k).unwrap();
        assert!((q - 0.7f64.tanh().powi(2)).abs() < 1e-12);
        let q = gibbs_expectation(
            |a, b| {
                overlap(
                    &SpinConfiguration::new(a.to_vec()).unwrap(),
                    &SpinConfiguration::new(b.to_vec()).unwrap(),
                )
                .unwrap()
            },
            MeasureKind::Product,
            &g,
            &p,
            &s,
            &k,
        )
        .unwrap();
        assert!((q - 0.7f64.tanh().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn independent_site_overlap_variance() {
        // |Λ| Var(q12) = 1 - tanh^4 h for independent spins
        let g = BoxGeometry::chain(6).unwrap();
        let s = sample_disorder(&g, 2, 0);
        let h = 0.6f64;
        let th2 = h.tanh().powi(2);
        let p = ModelParams::new(0.0, 0.0, h);
        let v = overlap_moment(2, th2, MeasureKind::Product, &g, &p, &s, &nn1()).unwrap();
        assert!((v * 6.0 - (1.0 - th2 * th2)).abs() < 1e-12);
        let v2 = overlap_moment(2, th2, MeasureKind::Coupled, &g, &p, &s, &nn1()).unwrap();
        assert!((v2 - v).abs() < 1e-12);
        let c = overlap_moment(1, th2, MeasureKind::Product, &g, &p, &s, &nn1()).unwrap();
        assert!(c.abs() < 1e-12);
    }

    #[test]
    fn single_site_overlap_square() {
        let g = BoxGeometry::cube(1, 0).unwrap();
        let s = sample_disorder(&g, 2, 0);
        let p = ModelParams::new(0.0, 0.8, 0.3).with_t(0.5).with_q(0.4);
        let v = overlap_moment(2, 0.0, MeasureKind::Product, &g, &p, &s, &nn1()).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn coupled_measure_matches_pair_brute_force() {
        let g = BoxGeometry::chain(4).unwrap();
        let k = nn1();
        let s = sample_disorder(&g, 17, 0);
        let p = ModelParams::new(0.3, 0.9, 0.2).with_t(0.6).with_q(0.3).with_lambda(1.4);
        let (form, tilt) = measure_setup(MeasureKind::Coupled, &g, &p, &s, &k).unwrap();
        let spectral = OverlapSpectrum::new(&form).unwrap().expect(tilt, |q| q);
        // oracle: explicit 2^8 pair states with coupled_replica_energy
        let n = 4;
        let mut xs = Vec::new();
        let mut qs = Vec::new();
        for a in 0..16u64 {
            for b in 0..16u64 {
                let s1 = SpinConfiguration::from_bits(n, a);
                let s2 = SpinConfiguration::from_bits(n, b);
                xs.push(-crate::hamiltonians::coupled_replica_energy(&s1, &s2, &p, &s, &k, &g).unwrap());
                qs.push(overlap(&s1, &s2).unwrap());
            }
        }
        let lz = log_sum_exp(&xs);
        let brute: f64 = xs.iter().zip(&qs).map(|(x, q)| (x - lz).exp() * q).sum();
        assert!((spectral - brute).abs() < 1e-10);
        let direct = gibbs_expectation(
            |a, b| a.iter().zip(b).map(|(x, y)| (x * y) as f64).sum::<f64>() / 4.0,
            MeasureKind::Coupled,
            &g,
            &p,
            &s,
            &k,
        )
        .unwrap();
        assert!((direct - brute).abs() < 1e-10);
        let log_z2 = coupled_partition(0.6, 1.4, 0.3, &g, &p, &s, &k).unwrap();
        assert!((log_z2 - lz).abs() < 1e-10);
    }

    #[test]
    fn coupled_partition_properties() {
        let g = BoxGeometry::chain(6).unwrap();
        let k = nn1();
        let s = sample_disorder(&g, 3, 1);
        let p = ModelParams::new(0.2, 0.7, 0.4);
        let z1 = partition_function(&g, &p.clone().with_t(0.5).with_q(0.3), &s, &k).unwrap();
        let z2 = coupled_partition(0.5, 0.0, 0.3, &g, &p, &s, &k).unwrap();
        assert!((z2 - 2.0 * z1).abs() < 1e-10);
        let mut last = f64::NEG_INFINITY;
        for i in 0..20 {
            let v = coupled_partition(0.5, i as f64 * 0.25, 0.3, &g, &p, &s, &k).unwrap();
            assert!(v >= last - 1e-12);
            last = v;
        }
        let one = BoxGeometry::cube(1, 0).unwrap();
        let s1 = sample_disorder(&one, 3, 0);
        let p0 = ModelParams::new(0.0, 0.0, 0.3);
        let v = coupled_partition(0.0, 2.0, 0.5, &one, &p0, &s1, &k).unwrap();
        assert!((v - 2.0 * log_2cosh(0.3)).abs() < 1e-14);
    }

    #[test]
    fn replica_factorization() {
        let g = BoxGeometry::chain(5).unwrap();
        let k = nn1();
        let s = sample_disorder(&g, 8, 0);
        let p = ModelParams::new(0.4, 0.6, 0.2).with_t(0.3).with_q(0.5);
        let form = QuadraticForm::interpolating(&g, &k, &s, &p).unwrap();
        let a = expectation(&form, |x| (x[0] * x[1]) as f64).unwrap();
        let b = expectation(&form, |x| x[3] as f64).unwrap();
        let ab = pair_expectation(&form, OverlapTilt::None, |x, y| (x[0] * x[1] * y[3]) as f64).unwrap();
        assert!((ab - a * b).abs() < 1e-10);
    }

    #[test]
    fn generating_function_properties() {
        let g = BoxGeometry::chain(8).unwrap();
        let k = nn1();
        let f = sample_fields(8, 5, 0);
        let (kappa, h, gamma, q) = (0.1, 0.4, 0.5, 0.2);
        assert_eq!(replica_generating_function(0.0, q, &g, kappa, h, gamma, &f, &k).unwrap(), 0.0);
        let form = QuadraticForm::rfim(&g, &k, kappa, h, gamma, &f).unwrap();
        let spec = OverlapSpectrum::new(&form).unwrap();
        let mus: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.1).collect();
        let alpha: Vec<f64> = mus.iter().map(|&m| generating_function_from_spectrum(&spec, m, q)).collect();
        for w in alpha.windows(3) {
            assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-12);
        }
        // slope at 0 is ½(⟨q12⟩ - q)
        let eps = 1e-5;
        let slope = (generating_function_from_spectrum(&spec, eps, q)
            - generating_function_from_spectrum(&spec, -eps, q))
            / (2.0 * eps);
        let mean_q = spec.expect(OverlapTilt::None, |x| x);
        assert!((slope - 0.5 * (mean_q - q)).abs() < 1e-8);
        let (m1, _) = product_overlap_moments(&form).unwrap();
        assert!((mean_q - m1).abs() < 1e-12);
    }

    #[test]
    fn derivative_check_beta_zero() {
        let g = BoxGeometry::chain(4).unwrap();
        let samples: Vec<_> = (0..5).map(|i| sample_disorder(&g, 1, i)).collect();
        let p = ModelParams::new(0.3, 0.0, 0.2).with_q(0.5);
        let pts = interpolation_derivative_check(&[0.2, 0.5], 1e-4, &g, &p, &samples, &nn1()).unwrap();
        for pt in pts {
            assert_eq!(pt.mean_derivative, 0.0);
            assert_eq!(pt.mean_prediction, 0.0);
        }
        assert!(interpolation_derivative_check(&[0.0], 1e-4, &g, &p, &samples, &nn1()).is_err());
        assert!(interpolation_derivative_check(&[1.0], 1e-4, &g, &p, &samples, &nn1()).is_err());
    }

    #[test]
    fn derivative_single_site_q_one() {
        // One site, κ = h = 0, q = 1: log Z(t) = log 2cosh(β√(1-t) J_0) + β√t J_00/√2.
        let g = BoxGeometry::cube(1, 0).unwrap();
        let s = DisorderSample::from_parts(vec![0.3], vec![-0.9], 0, 0).unwrap();
        let beta = 0.8f64;
        let p = ModelParams::new(0.0, beta, 0.0).with_q(1.0).with_t(0.4);
        let (d, m2) = interpolation_derivative(&g, &p, &s, &nn1()).unwrap();
        let t = 0.4f64;
        let a = beta * (1.0 - t).sqrt() * -0.9;
        let symbolic = a.tanh() * beta * -0.9 * (-0.5 / (1.0 - t).sqrt()) + beta * 0.3 / 2f64.sqrt() * 0.5 / t.sqrt();
        assert!((d - symbolic).abs() < 1e-13);
        // ⟨(q12 - 1)^2⟩ = (1 - m^2)·4/2 ... for one site: q12 = σ¹σ², (q12-1)^2 = 4·[σ¹≠σ²]
        let m = a.tanh();
        assert!((m2 - 2.0 * (1.0 - m * m)).abs() < 1e-13);
    }

    #[test]
    fn gaussian_integration_by_parts() {
        // E[J_ij ⟨σ_iσ_j⟩_t] = E[∂_{J_ij} ⟨σ_iσ_j⟩_t] = β√t/√(2n) E[1 - ⟨σ_iσ_j⟩²]
        let g = BoxGeometry::chain(4).unwrap();
        let k = nn1();
        let p = ModelParams::new(0.2, 1.2, 0.3).with_t(0.7).with_q(0.4);
        let scale = p.beta * p.t.sqrt() / (8f64).sqrt();
        let (lhs, rhs): (Vec<f64>, Vec<f64>) = (0..20_000u64)
            .into_par_iter()
            .map(|idx| {
                let s = sample_disorder(&g, 77, idx);
                let form = QuadraticForm::interpolating(&g, &k, &s, &p).unwrap();
                let c = expectation(&form, |x| (x[0] * x[2]) as f64).unwrap();
                (s.coupling(0, 2) * c, scale * (1.0 - c * c))
            })
            .unzip();
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let m = stats::mean(&diff);
        assert!(m.abs() < 3.0 * stats::std_error(&diff), "IBP residual {m}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn pressures_finite_in_range(seed in 0u64..500, h in -5.0f64..5.0, beta in 0.0f64..2.0, kappa in 0.0f64..1.0) {
            let g = BoxGeometry::chain(12).unwrap();
            let s = sample_disorder(&g, seed, 0);
            let p = pressure(&g, &ModelParams::new(kappa, beta, h), &s, &nn1()).unwrap();
            prop_assert!(p.is_finite());
            let sum = gibbs_summary(&QuadraticForm::interpolating(&g, &nn1(), &s, &ModelParams::new(kappa, beta, h)).unwrap()).unwrap();
            prop_assert!((sum.pressure * 12.0 - sum.log_partition).abs() <= 1e-12 * sum.log_partition.abs());
            prop_assert!(sum.magnetizations.iter().all(|m| m.abs() <= 1.0));
        }
    }
}
