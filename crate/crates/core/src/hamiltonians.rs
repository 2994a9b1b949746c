//! Energy functions of the model. Energies are the currency of this module:
//! every Boltzmann weight is `exp(-E)`.
//!
//! The direct functions (`ising_energy`, `sk_energy`, ...) evaluate the sums
//! as written and serve as references. Engines use [`QuadraticForm`], the
//! compiled `offset - Σ_{i<j} W_ij σ_i σ_j - Σ_i b_i σ_i` representation with
//! cached local fields.

use crate::disorder::DisorderSample;
use crate::error::{Error, Result};
use crate::lattice::{BoxGeometry, InteractionKernel};

/// Whether the `i = j` terms of the SK double sum are kept. They only add the
/// configuration-independent constant `-Σ_i J_ii / sqrt(2|Λ|)` to the energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SkDiagonal {
    #[default]
    Included,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfiguration(Vec<i8>);

impl SpinConfiguration {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::domain("spins must be +1 or -1"));
        }
        Ok(Self(spins))
    }

    pub fn all_up(n: usize) -> Self {
        Self(vec![1; n])
    }

    /// Bit `i` of `bits` set means `σ_i = +1`.
    pub fn from_bits(n: usize, bits: u64) -> Self {
        Self((0..n).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect())
    }

    pub fn to_bits(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 1)
            .fold(0u64, |acc, (i, _)| acc | 1 << i)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i] as f64
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] = -self.0[i];
    }

    pub fn flipped(&self) -> Self {
        Self(self.0.iter().map(|s| -s).collect())
    }

    pub fn magnetization(&self) -> f64 {
        self.0.iter().map(|&s| s as f64).sum::<f64>() / self.0.len() as f64
    }
}

/// Model and interpolation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Ising inverse temperature.
    pub kappa: f64,
    /// SK inverse temperature.
    pub beta: f64,
    /// Uniform external field.
    pub h: f64,
    /// Random-field strength of the RFIM energies.
    pub gamma: f64,
    /// Interpolation parameter.
    pub t: f64,
    /// Trial overlap.
    pub q: f64,
    /// Replica coupling strength.
    pub lambda: f64,
    /// Generating-function parameter.
    pub mu: f64,
    pub sk_diagonal: SkDiagonal,
}

impl ModelParams {
    /// The full model at `t = 1`.
    pub fn new(kappa: f64, beta: f64, h: f64) -> Self {
        Self {
            kappa,
            beta,
            h,
            gamma: 0.0,
            t: 1.0,
            q: 0.0,
            lambda: 0.0,
            mu: 0.0,
            sk_diagonal: SkDiagonal::Included,
        }
    }

    pub fn with_t(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub fn with_q(mut self, q: f64) -> Self {
        self.q = q;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_sk_diagonal(mut self, d: SkDiagonal) -> Self {
        self.sk_diagonal = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.kappa, self.beta, self.h, self.gamma, self.t, self.q, self.lambda, self.mu,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("parameters must be finite"));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(Error::domain(format!("t = {} outside [0,1]", self.t)));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::domain(format!("q = {} outside [0,1]", self.q)));
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
        ] {
            if v < 0.0 {
                return Err(Error::domain(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

fn check_len(sigma: &SpinConfiguration, n: usize) -> Result<()> {
    if sigma.len() != n {
        return Err(Error::domain(format!(
            "configuration has {} spins, expected {n}",
            sigma.len()
        )));
    }
    Ok(())
}

/// `K(i - j)` for all ordered site pairs, row-major.
pub fn kernel_matrix(geometry: &BoxGeometry, kernel: &InteractionKernel) -> Result<Vec<f64>> {
    if kernel.dim() != geometry.dim() {
        return Err(Error::domain("kernel and box dimensions differ"));
    }
    let sites = geometry.sites();
    let n = sites.len();
    let mut m = vec![0.0; n * n];
    if kernel.is_zero() {
        return Ok(m);
    }
    let mut disp = vec![0i64; geometry.dim()];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for (k, d) in disp.iter_mut().enumerate() {
                *d = sites[i][k] - sites[j][k];
            }
            m[i * n + j] = kernel.value(&disp);
        }
    }
    Ok(m)
}

/// `H^I(σ) = -½ Σ_{i,j} K(i-j) σ_i σ_j` with free boundary.
pub fn ising_energy(
    sigma: &SpinConfiguration,
    kernel: &InteractionKernel,
    geometry: &BoxGeometry,
) -> Result<f64> {
    check_len(sigma, geometry.volume())?;
    let n = geometry.volume();
    let k = kernel_matrix(geometry, kernel)?;
    let mut e = 0.0;
    for i in 0..n {
        for j in 0..n {
            e += k[i * n + j] * sigma.get(i) * sigma.get(j);
        }
    }
    Ok(-0.5 * e)
}

/// `H^SK(σ;J) = -(2|Λ|)^{-1/2} Σ_{i,j} J_ij σ_i σ_j` over ordered pairs.
pub fn sk_energy(sigma: &SpinConfiguration, sample: &DisorderSample, diagonal: SkDiagonal) -> Result<f64> {
    let n = sample.volume();
    check_len(sigma, n)?;
    let mut e = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j && diagonal == SkDiagonal::Excluded {
                continue;
            }
            e += sample.coupling(i, j) * sigma.get(i) * sigma.get(j);
        }
    }
    Ok(-e / (2.0 * n as f64).sqrt())
}

/// `-Σ_i σ_i (h + γ J_i)`.
pub fn field_energy(sigma: &SpinConfiguration, h: f64, gamma: f64, sample: &DisorderSample) -> Result<f64> {
    check_len(sigma, sample.volume())?;
    Ok(-sigma
        .spins()
        .iter()
        .zip(sample.fields())
        .map(|(&s, j)| s as f64 * (h + gamma * j))
        .sum::<f64>())
}

/// `H^(t)(σ) = κ H^I + β√t H^SK - Σ σ_i (h + β√(q(1-t)) J_i)`.
pub fn interpolating_energy(
    sigma: &SpinConfiguration,
    params: &ModelParams,
    sample: &DisorderSample,
    kernel: &InteractionKernel,
    geometry: &BoxGeometry,
) -> Result<f64> {
    params.validate()?;
    let gamma = params.beta * (params.q * (1.0 - params.t)).sqrt();
    Ok(params.kappa * ising_energy(sigma, kernel, geometry)?
        + params.beta * params.t.sqrt() * sk_energy(sigma, sample, params.sk_diagonal)?
        + field_energy(sigma, params.h, gamma, sample)?)
}

/// `q_12 = |Λ|^{-1} Σ_i σ¹_i σ²_i`.
pub fn overlap(sigma1: &SpinConfiguration, sigma2: &SpinConfiguration) -> Result<f64> {
    if sigma1.len() != sigma2.len() {
        return Err(Error::domain("replicas have different lengths"));
    }
    let dot: i64 = sigma1
        .spins()
        .iter()
        .zip(sigma2.spins())
        .map(|(&a, &b)| (a * b) as i64)
        .sum();
    Ok(dot as f64 / sigma1.len() as f64)
}

/// `H^(t)(σ¹) + H^(t)(σ²) - (β²/2)|Λ| λ (q_12 - q)²`.
pub fn coupled_replica_energy(
    sigma1: &SpinConfiguration,
    sigma2: &SpinConfiguration,
    params: &ModelParams,
    sample: &DisorderSample,
    kernel: &InteractionKernel,
    geometry: &BoxGeometry,
) -> Result<f64> {
    let q12 = overlap(sigma1, sigma2)?;
    let n = geometry.volume() as f64;
    Ok(interpolating_energy(sigma1, params, sample, kernel, geometry)?
        + interpolating_energy(sigma2, params, sample, kernel, geometry)?
        - 0.5 * params.beta.powi(2) * n * params.lambda * (q12 - params.q).powi(2))
}

/// `E(σ) = offset - Σ_{i<j} W_ij σ_i σ_j - Σ_i b_i σ_i` with `W` symmetric and
/// zero on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    n: usize,
    couplings: Vec<f64>,
    fields: Vec<f64>,
    offset: f64,
}

impl QuadraticForm {
    pub fn new(n: usize, couplings: Vec<f64>, fields: Vec<f64>, offset: f64) -> Result<Self> {
        if couplings.len() != n * n || fields.len() != n {
            return Err(Error::domain("quadratic form shape mismatch"));
        }
        for i in 0..n {
            if couplings[i * n + i] != 0.0 {
                return Err(Error::domain("quadratic form must have zero diagonal"));
            }
            for j in 0..i {
                if couplings[i * n + j] != couplings[j * n + i] {
                    return Err(Error::domain("quadratic form must be symmetric"));
                }
            }
        }
        Ok(Self {
            n,
            couplings,
            fields,
            offset,
        })
    }

    /// Field-only energy `-Σ b_i σ_i`.
    pub fn free(fields: Vec<f64>) -> Self {
        let n = fields.len();
        Self {
            n,
            couplings: vec![0.0; n * n],
            fields,
            offset: 0.0,
        }
    }

    /// Random-field Ising energy `κ H^I - Σ σ_i (h + γ J_i)`.
    pub fn rfim(
        geometry: &BoxGeometry,
        kernel: &InteractionKernel,
        kappa: f64,
        h: f64,
        gamma: f64,
        fields: &[f64],
    ) -> Result<Self> {
        let n = geometry.volume();
        if fields.len() != n {
            return Err(Error::domain("field vector length does not match the box"));
        }
        let mut w = kernel_matrix(geometry, kernel)?;
        w.iter_mut().for_each(|x| *x *= kappa);
        let b = fields.iter().map(|j| h + gamma * j).collect();
        Ok(Self {
            n,
            couplings: w,
            fields: b,
            offset: 0.0,
        })
    }

    /// The interpolating energy `H^(t)`.
    pub fn interpolating(
        geometry: &BoxGeometry,
        kernel: &InteractionKernel,
        sample: &DisorderSample,
        params: &ModelParams,
    ) -> Result<Self> {
        params.validate()?;
        let n = geometry.volume();
        if sample.volume() != n {
            return Err(Error::domain("disorder sample does not match the box"));
        }
        let gamma = params.beta * (params.q * (1.0 - params.t)).sqrt();
        let mut form = Self::rfim(geometry, kernel, params.kappa, params.h, gamma, sample.fields())?;
        let sk_scale = params.beta * params.t.sqrt();
        form.add_sk(sample, sk_scale, params.sk_diagonal);
        Ok(form)
    }

    /// `∂_t H^(t)`, defined on the open interval `0 < t < 1`.
    pub fn interpolation_t_derivative(sample: &DisorderSample, params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let t = params.t;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::domain(format!("t-derivative needs 0 < t < 1, got {t}")));
        }
        let n = sample.volume();
        let c = params.beta * params.q.sqrt() / (2.0 * (1.0 - t).sqrt());
        let mut form = Self {
            n,
            couplings: vec![0.0; n * n],
            fields: sample.fields().iter().map(|j| -c * j).collect(),
            offset: 0.0,
        };
        form.add_sk(sample, params.beta / (2.0 * t.sqrt()), params.sk_diagonal);
        Ok(form)
    }

    // adds scale * H^SK
    fn add_sk(&mut self, sample: &DisorderSample, scale: f64, diagonal: SkDiagonal) {
        let n = self.n;
        if scale == 0.0 {
            return;
        }
        let norm = scale / (2.0 * n as f64).sqrt();
        for i in 0..n {
            for j in 0..i {
                let w = norm * (sample.coupling(i, j) + sample.coupling(j, i));
                self.couplings[i * n + j] += w;
                self.couplings[j * n + i] += w;
            }
        }
        if diagonal == SkDiagonal::Included {
            let trace: f64 = (0..n).map(|i| sample.coupling(i, i)).sum();
            self.offset -= norm * trace;
        }
    }

    /// The form multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            couplings: self.couplings.iter().map(|x| x * s).collect(),
            fields: self.fields.iter().map(|x| x * s).collect(),
            offset: self.offset * s,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.couplings[i * self.n..(i + 1) * self.n]
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn has_couplings(&self) -> bool {
        self.couplings.iter().any(|&w| w != 0.0)
    }

    pub fn energy(&self, sigma: &SpinConfiguration) -> f64 {
        self.energy_of(sigma.spins())
    }

    pub fn energy_of(&self, s: &[i8]) -> f64 {
        let n = self.n;
        let mut e = self.offset;
        for i in 0..n {
            let si = s[i] as f64;
            let row = self.row(i);
            let mut acc = 0.0;
            for j in 0..i {
                acc += row[j] * s[j] as f64;
            }
            e -= si * (acc + self.fields[i]);
        }
        e
    }

    /// `Σ_j W_ij σ_j + b_i`.
    pub fn local_field(&self, s: &[i8], i: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(s)
            .map(|(w, &sj)| w * sj as f64)
            .sum::<f64>()
            + self.fields[i]
    }

    /// `E(σ with σ_i flipped) - E(σ)` from the local field.
    pub fn flip_delta(&self, s: &[i8], i: usize) -> f64 {
        2.0 * s[i] as f64 * self.local_field(s, i)
    }
}

/// Spins with cached local fields of a [`QuadraticForm`]; O(1) flip energies,
/// O(n) updates.
#[derive(Debug, Clone)]
pub struct LocalFieldCache {
    spins: Vec<i8>,
    local: Vec<f64>,
}

impl LocalFieldCache {
    pub fn new(form: &QuadraticForm, spins: Vec<i8>) -> Self {
        let local = (0..form.len()).map(|i| form.local_field(&spins, i)).collect();
        Self { spins, local }
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn local_fields(&self) -> &[f64] {
        &self.local
    }

    #[inline]
    pub fn flip_delta(&self, i: usize) -> f64 {
        2.0 * self.spins[i] as f64 * self.local[i]
    }

    #[inline]
    pub fn flip(&mut self, form: &QuadraticForm, i: usize) {
        self.spins[i] = -self.spins[i];
        let change = 2.0 * self.spins[i] as f64;
        for (l, w) in self.local.iter_mut().zip(form.row(i)) {
            *l += change * w;
        }
    }

    /// Largest deviation between cached and recomputed local fields.
    pub fn drift(&self, form: &QuadraticForm) -> f64 {
        (0..self.spins.len())
            .map(|i| (form.local_field(&self.spins, i) - self.local[i]).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::sample_disorder;
    use proptest::prelude::*;

    fn chain3() -> (BoxGeometry, InteractionKernel) {
        (
            BoxGeometry::cube(1, 1).unwrap(),
            InteractionKernel::nearest_neighbor(1, 1.0).unwrap(),
        )
    }

    #[test]
    fn ising_examples() {
        let (g, k) = chain3();
        let up = SpinConfiguration::all_up(3);
        assert_eq!(ising_energy(&up, &k, &g).unwrap(), -2.0);
        let z = InteractionKernel::zero(1).unwrap();
        let s = SpinConfiguration::new(vec![1, -1, 1]).unwrap();
        assert_eq!(ising_energy(&s, &z, &g).unwrap(), 0.0);
        assert_eq!(ising_energy(&s, &k, &g).unwrap(), 2.0);
    }

    #[test]
    fn sk_single_site() {
        let s = DisorderSample::from_parts(vec![0.7], vec![0.1], 0, 0).unwrap();
        let up = SpinConfiguration::all_up(1);
        let e = sk_energy(&up, &s, SkDiagonal::Included).unwrap();
        assert!((e + 0.7 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(sk_energy(&up, &s, SkDiagonal::Excluded).unwrap(), 0.0);
    }

    #[test]
    fn sk_variance_over_disorder() {
        // E[H^SK(σ)^2] = Σ_ij 1 / (2n) = n/2 for fixed σ
        let g = BoxGeometry::chain(6).unwrap();
        let sigma = SpinConfiguration::new(vec![1, -1, 1, 1, -1, -1]).unwrap();
        let vals: Vec<f64> = (0..10_000)
            .map(|k| sk_energy(&sigma, &sample_disorder(&g, 5, k), SkDiagonal::Included).unwrap())
            .collect();
        let var = crate::stats::mean(&vals.iter().map(|x| x * x).collect::<Vec<_>>());
        // stderr of the mean of x^2 for x ~ N(0, 3): sqrt(2) * 3 / 100
        assert!((var - 3.0).abs() < 3.0 * 2f64.sqrt() * 3.0 / 100.0, "var {var}");
    }

    #[test]
    fn field_examples() {
        let g = BoxGeometry::cube(1, 1).unwrap();
        let s = sample_disorder(&g, 1, 0);
        let up = SpinConfiguration::all_up(3);
        assert_eq!(field_energy(&up, 0.5, 0.0, &s).unwrap(), -1.5);
        assert_eq!(field_energy(&up, 0.0, 0.0, &s).unwrap(), 0.0);
        let one = DisorderSample::from_parts(vec![0.0], vec![-1.3], 0, 0).unwrap();
        assert_eq!(
            field_energy(&SpinConfiguration::all_up(1), 0.0, 1.0, &one).unwrap(),
            1.3
        );
    }

    #[test]
    fn interpolation_endpoints() {
        let (g, k) = chain3();
        let s = sample_disorder(&g, 2, 0);
        let sigma = SpinConfiguration::new(vec![1, -1, -1]).unwrap();
        let p = ModelParams::new(0.3, 0.7, 0.2).with_q(0.4);
        let full = 0.3 * ising_energy(&sigma, &k, &g).unwrap()
            + 0.7 * sk_energy(&sigma, &s, SkDiagonal::Included).unwrap()
            + field_energy(&sigma, 0.2, 0.0, &s).unwrap();
        let e1 = interpolating_energy(&sigma, &p.clone().with_t(1.0), &s, &k, &g).unwrap();
        assert!((e1 - full).abs() < 1e-14);
        let rfim = 0.3 * ising_energy(&sigma, &k, &g).unwrap()
            + field_energy(&sigma, 0.2, 0.7 * 0.4f64.sqrt(), &s).unwrap();
        let e0 = interpolating_energy(&sigma, &p.with_t(0.0), &s, &k, &g).unwrap();
        assert!((e0 - rfim).abs() < 1e-14);
    }

    #[test]
    fn overlap_examples() {
        let a = SpinConfiguration::new(vec![1, 1, -1]).unwrap();
        let b = SpinConfiguration::new(vec![1, -1, -1]).unwrap();
        assert!((overlap(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(overlap(&a, &a).unwrap(), 1.0);
        assert_eq!(overlap(&a, &a.flipped()).unwrap(), -1.0);
        assert!(overlap(&a, &SpinConfiguration::all_up(2)).is_err());
    }

    #[test]
    fn coupled_energy_examples() {
        let (g, k) = chain3();
        let s = sample_disorder(&g, 3, 0);
        let a = SpinConfiguration::new(vec![1, 1, -1]).unwrap();
        let b = SpinConfiguration::new(vec![-1, 1, -1]).unwrap();
        let p = ModelParams::new(0.2, 0.5, 0.1).with_t(0.4).with_q(0.3);
        let sum = interpolating_energy(&a, &p, &s, &k, &g).unwrap()
            + interpolating_energy(&b, &p, &s, &k, &g).unwrap();
        let e = coupled_replica_energy(&a, &b, &p, &s, &k, &g).unwrap();
        assert!((e - sum).abs() < 1e-14);
        let p1 = p.clone().with_q(1.0).with_lambda(2.0);
        let self_pair = coupled_replica_energy(&a, &a, &p1, &s, &k, &g).unwrap();
        assert!((self_pair - 2.0 * interpolating_energy(&a, &p1, &s, &k, &g).unwrap()).abs() < 1e-14);
        let p2 = p.with_q(0.0).with_lambda(1.0);
        let e2 = coupled_replica_energy(&a, &a, &p2, &s, &k, &g).unwrap();
        let expect = 2.0 * interpolating_energy(&a, &p2, &s, &k, &g).unwrap() - 0.5 * 0.25 * 3.0;
        assert!((e2 - expect).abs() < 1e-14);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.1, 0.1, 0.0).with_t(1.5).validate().is_err());
        assert!(ModelParams::new(-0.1, 0.1, 0.0).validate().is_err());
        assert!(ModelParams::new(0.1, 0.1, 0.0).with_q(-0.1).validate().is_err());
        assert!(ModelParams::new(0.1, 0.1, -3.0).validate().is_ok());
    }

    fn config_strategy(n: usize) -> impl Strategy<Value = SpinConfiguration> {
        proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], n)
            .prop_map(|v| SpinConfiguration::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn compiled_form_matches_direct(
            sigma in config_strategy(9),
            seed in 0u64..1000,
            kappa in 0.0f64..1.0, beta in 0.0f64..2.0, h in -2.0f64..2.0,
            t in 0.0f64..=1.0, q in 0.0f64..=1.0,
            excluded in any::<bool>(),
        ) {
            let g = BoxGeometry::cube(2, 1).unwrap();
            let k = InteractionKernel::exponential(2, 1.0, 0.7, 2).unwrap();
            let s = sample_disorder(&g, seed, 0);
            let diag = if excluded { SkDiagonal::Excluded } else { SkDiagonal::Included };
            let p = ModelParams::new(kappa, beta, h).with_t(t).with_q(q).with_sk_diagonal(diag);
            let direct = interpolating_energy(&sigma, &p, &s, &k, &g).unwrap();
            let form = QuadraticForm::interpolating(&g, &k, &s, &p).unwrap();
            prop_assert!((form.energy(&sigma) - direct).abs() < 1e-10);
        }

        #[test]
        fn flip_delta_matches_recomputation(sigma in config_strategy(9), seed in 0u64..1000, site in 0usize..9) {
            let g = BoxGeometry::cube(2, 1).unwrap();
            let k = InteractionKernel::nearest_neighbor(2, 1.0).unwrap();
            let s = sample_disorder(&g, seed, 1);
            let p = ModelParams::new(0.4, 1.1, 0.3).with_t(0.6).with_q(0.5);
            let form = QuadraticForm::interpolating(&g, &k, &s, &p).unwrap();
            let mut flipped = sigma.clone();
            flipped.flip(site);
            let full = form.energy(&flipped) - form.energy(&sigma);
            prop_assert!((form.flip_delta(sigma.spins(), site) - full).abs() < 1e-10);
            let mut cache = LocalFieldCache::new(&form, sigma.spins().to_vec());
            prop_assert!((cache.flip_delta(site) - full).abs() < 1e-10);
            cache.flip(&form, site);
            prop_assert!(cache.drift(&form) < 1e-10);
        }

        #[test]
        fn parity_and_symmetry(sigma in config_strategy(9), other in config_strategy(9), seed in 0u64..1000) {
            let g = BoxGeometry::cube(2, 1).unwrap();
            let k = InteractionKernel::nearest_neighbor(2, 1.0).unwrap();
            let s = sample_disorder(&g, seed, 2);
            let flipped = sigma.flipped();
            prop_assert!((ising_energy(&sigma, &k, &g).unwrap() - ising_energy(&flipped, &k, &g).unwrap()).abs() < 1e-12);
            prop_assert!((sk_energy(&sigma, &s, SkDiagonal::Included).unwrap() - sk_energy(&flipped, &s, SkDiagonal::Included).unwrap()).abs() < 1e-12);
            prop_assert!((field_energy(&sigma, 0.3, 0.8, &s).unwrap() + field_energy(&flipped, 0.3, 0.8, &s).unwrap()).abs() < 1e-12);
            let p = ModelParams::new(0.2, 0.9, 0.1).with_t(0.3).with_q(0.6).with_lambda(1.5);
            let ab = coupled_replica_energy(&sigma, &other, &p, &s, &k, &g).unwrap();
            let ba = coupled_replica_energy(&other, &sigma, &p, &s, &k, &g).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn beta_zero_is_t_and_q_independent(sigma in config_strategy(3), t in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let (g, k) = chain3();
            let s = sample_disorder(&g, 9, 0);
            let p = ModelParams::new(0.5, 0.0, 0.3);
            let base = interpolating_energy(&sigma, &p, &s, &k, &g).unwrap();
            let e = interpolating_energy(&sigma, &p.clone().with_t(t).with_q(q), &s, &k, &g).unwrap();
            prop_assert!((e - base).abs() < 1e-14);
            let expect = 0.5 * ising_energy(&sigma, &k, &g).unwrap() - 0.3 * sigma.spins().iter().map(|&x| x as f64).sum::<f64>();
            prop_assert!((base - expect).abs() < 1e-14);
        }
    }
}
