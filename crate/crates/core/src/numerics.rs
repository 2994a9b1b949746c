//! Log-domain accumulation, Gauss–Hermite rules, Simpson weights and a
//! golden-section line search.

use crate::error::{Error, Result};

/// Streaming `log Σ exp(x_k)` with a running max shift.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(2 cosh x)` without overflow.
#[inline]
pub fn log_2cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p()
}

/// Gauss–Hermite rule for expectations under the standard normal law:
/// `E f(Z) ≈ Σ w_k f(x_k)` with `Σ w_k = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order > 400 {
            return Err(Error::domain(format!(
                "Gauss-Hermite order must be in 1..=400, got {order}"
            )));
        }
        let (x, w) = hermite_physicists(order)?;
        let sqrt_pi = std::f64::consts::PI.sqrt();
        Ok(Self {
            nodes: x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|v| v / sqrt_pi).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

// Nodes seeded by the eigenvalues of the Jacobi matrix, then polished by
// Newton on orthonormal Hermite polynomials; weight exp(-x^2).
fn hermite_physicists(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut seeds: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    seeds.sort_by(|a, b| b.total_cmp(a));
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = seeds[i];
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence {
                context: format!("Gauss-Hermite root {i} of order {n}"),
                iterations: 100,
                trajectory: vec![z],
            });
        }
        if n % 2 == 1 && i == n / 2 {
            z = 0.0;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    Ok((x, w))
}

/// Composite Simpson weights on an arbitrary strictly increasing grid with an
/// even number of intervals.
pub fn simpson_weights(nodes: &[f64]) -> Result<Vec<f64>> {
    let n = nodes.len();
    if n < 3 || n % 2 == 0 {
        return Err(Error::domain(format!(
            "Simpson rule needs an odd number (>= 3) of nodes, got {n}"
        )));
    }
    if nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("quadrature nodes must be strictly increasing"));
    }
    let mut w = vec![0.0; n];
    for k in (0..n - 2).step_by(2) {
        let h0 = nodes[k + 1] - nodes[k];
        let h1 = nodes[k + 2] - nodes[k + 1];
        let s = (h0 + h1) / 6.0;
        w[k] += s * (2.0 - h1 / h0);
        w[k + 1] += s * (h0 + h1).powi(2) / (h0 * h1);
        w[k + 2] += s * (2.0 - h0 / h1);
    }
    Ok(w)
}

/// Golden-section search for a minimum of `f` on `[a, b]`.
pub fn golden_section(mut a: f64, mut b: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn streaming_matches_two_pass() {
        let xs = [-800.0, 3.0, 700.0, 699.5, -1.0];
        let mut acc = LogSumExp::new();
        for &x in &xs {
            acc.push(x);
        }
        assert!((acc.value() - log_sum_exp(&xs)).abs() < 1e-12);
        assert_eq!(LogSumExp::new().value(), f64::NEG_INFINITY);
    }

    #[test]
    fn log_2cosh_large_arguments() {
        assert!((log_2cosh(0.5) - (2.0 * 0.5f64.cosh()).ln()).abs() < 1e-15);
        assert!((log_2cosh(-1000.0) - 1000.0).abs() < 1e-12);
        assert_eq!(log_2cosh(0.0), 2f64.ln());
    }

    #[test]
    fn hermite_moments() {
        for order in [1, 2, 5, 40, 80, 200] {
            let gh = GaussHermite::new(order).unwrap();
            assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-12, "order {order}");
            if order >= 2 {
                assert!((gh.expect(|x| x * x) - 1.0).abs() < 1e-12);
                assert!(gh.expect(|x| x).abs() < 1e-12);
            }
            if order >= 3 {
                assert!((gh.expect(|x| x.powi(4)) - 3.0).abs() < 1e-10);
            }
        }
        // E cos(Z) = e^{-1/2}
        let gh = GaussHermite::new(40).unwrap();
        assert!((gh.expect(f64::cos) - (-0.5f64).exp()).abs() < 1e-14);
        assert!(GaussHermite::new(0).is_err());
    }

    #[test]
    fn simpson_exact_for_cubics() {
        let nodes: Vec<f64> = (0..21).map(|k| k as f64 / 20.0).collect();
        let w = simpson_weights(&nodes).unwrap();
        let integral: f64 = nodes.iter().zip(&w).map(|(x, w)| w * x.powi(3)).sum();
        assert!((integral - 0.25).abs() < 1e-14);
        let uneven = [0.0, 0.1, 0.3, 0.35, 1.0];
        let w = simpson_weights(&uneven).unwrap();
        let integral: f64 = uneven.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((integral - 1.0 / 3.0).abs() < 1e-14);
        assert!(simpson_weights(&[0.0, 0.5, 0.4]).is_err());
        assert!(simpson_weights(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn golden_section_parabola() {
        let (x, fx) = golden_section(0.0, 1.0, 1e-8, |x| (x - 0.3).powi(2) + 1.0);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn lse_shift_equivariant(xs in proptest::collection::vec(-50.0f64..50.0, 1..20), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            prop_assert!((log_sum_exp(&shifted) - log_sum_exp(&xs) - c).abs() < 1e-10);
        }
    }
}
