//! Box geometry, the Ising interaction kernel and Dobrushin diagnostics.
//!
//! Sites are ordered lexicographically (first coordinate most significant).
//! Distances between lattice points use the L1 norm throughout.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A lattice point.
pub type Site = Vec<i64>;

/// L1 norm of a displacement.
pub fn lattice_norm(v: &[i64]) -> i64 {
    v.iter().map(|x| x.abs()).sum()
}

/// A rectangular box of lattice sites with free boundary conditions.
///
/// The cube `{-N..N}^d` is the standard volume; chains of arbitrary length
/// are available through [`BoxGeometry::chain`] for sizes that are not of the
/// form `2N+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGeometry {
    dim: usize,
    lower: Vec<i64>,
    upper: Vec<i64>,
    radius: Option<u32>,
    sites: Vec<Site>,
}

impl BoxGeometry {
    /// The hypercube `{-N,...,N}^d`.
    pub fn cube(dim: usize, radius: u32) -> Result<Self> {
        let r = radius as i64;
        let mut g = Self::rect(vec![-r; dim], vec![r; dim])?;
        g.radius = Some(radius);
        Ok(g)
    }

    /// A one-dimensional chain `{0,...,len-1}`.
    pub fn chain(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::domain("chain length must be positive"));
        }
        Self::rect(vec![0], vec![len as i64 - 1])
    }

    /// The box `lower <= x <= upper` coordinatewise.
    pub fn rect(lower: Vec<i64>, upper: Vec<i64>) -> Result<Self> {
        let dim = lower.len();
        if dim == 0 {
            return Err(Error::domain("dimension must be at least 1"));
        }
        if upper.len() != dim {
            return Err(Error::domain("lower and upper corners differ in dimension"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::domain("empty box"));
        }
        let extents: Vec<u64> = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| (u - l) as u64 + 1)
            .collect();
        let volume = extents
            .iter()
            .try_fold(1u64, |acc, &e| acc.checked_mul(e))
            .filter(|&v| v <= usize::MAX as u64 && v <= (1u64 << 40))
            .ok_or_else(|| Error::size("box volume overflows the supported range"))?;
        let mut sites = Vec::with_capacity(volume as usize);
        let mut cur = lower.clone();
        loop {
            sites.push(cur.clone());
            // odometer increment, last axis fastest
            let mut axis = dim;
            loop {
                if axis == 0 {
                    return Ok(Self {
                        dim,
                        lower,
                        upper,
                        radius: None,
                        sites,
                    });
                }
                axis -= 1;
                if cur[axis] < upper[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = lower[axis];
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Box radius `N` when this is a centered cube.
    pub fn radius(&self) -> Option<u32> {
        self.radius
    }

    pub fn volume(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn lower(&self) -> &[i64] {
        &self.lower
    }

    pub fn upper(&self) -> &[i64] {
        &self.upper
    }

    pub fn contains(&self, site: &[i64]) -> bool {
        site.len() == self.dim
            && site
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| l <= x && x <= u)
    }

    /// Position of `site` in the lexicographic order.
    pub fn index_of(&self, site: &[i64]) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        let mut idx = 0usize;
        for k in 0..self.dim {
            let extent = (self.upper[k] - self.lower[k] + 1) as usize;
            idx = idx * extent + (site[k] - self.lower[k]) as usize;
        }
        Some(idx)
    }

    /// Index of the site closest to the geometric center.
    pub fn center_index(&self) -> usize {
        let c: Site = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + (u - l) / 2)
            .collect();
        self.index_of(&c).expect("center lies in the box")
    }

    /// L1 distance from a site to the outside of the box.
    pub fn distance_to_boundary(&self, site: &[i64]) -> i64 {
        site.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (l, u))| (x - l).min(u - x))
            .min()
            .unwrap_or(0)
            + 1
    }
}

/// All points of `{-N,...,N}^d` in strict lexicographic order.
pub fn enumerate_sites(dim: usize, radius: u32) -> Result<Vec<Site>> {
    Ok(BoxGeometry::cube(dim, radius)?.sites)
}

/// A symmetric, finite-range Ising coupling `K(i)` with an exponential decay
/// certificate `|K(i)| <= C1 exp(-C2 |i|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionKernel {
    dim: usize,
    values: BTreeMap<Site, f64>,
    range: i64,
    decay: (f64, f64),
}

impl InteractionKernel {
    /// Build from displacement/value pairs. Mirror images are filled in;
    /// contradicting mirror values and a nonzero `K(0)` are rejected. When
    /// `decay` is `None` the certificate uses `C2 = 1` and the smallest valid
    /// `C1`.
    pub fn from_entries(
        dim: usize,
        entries: impl IntoIterator<Item = (Site, f64)>,
        decay: Option<(f64, f64)>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("kernel dimension must be at least 1"));
        }
        let mut values: BTreeMap<Site, f64> = BTreeMap::new();
        for (disp, v) in entries {
            if disp.len() != dim {
                return Err(Error::domain(format!(
                    "displacement {disp:?} does not have dimension {dim}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::domain(format!("non-finite kernel value at {disp:?}")));
            }
            if disp.iter().all(|&x| x == 0) {
                if v != 0.0 {
                    return Err(Error::domain("K(0) must vanish"));
                }
                continue;
            }
            if v == 0.0 {
                continue;
            }
            let mirror: Site = disp.iter().map(|x| -x).collect();
            for key in [disp, mirror] {
                if let Some(&old) = values.get(&key) {
                    if old != v {
                        return Err(Error::domain(format!(
                            "kernel not symmetric at {key:?}: {old} vs {v}"
                        )));
                    }
                }
                values.insert(key, v);
            }
        }
        let range = values.keys().map(|d| lattice_norm(d)).max().unwrap_or(0);
        let decay = match decay {
            Some((c1, c2)) => {
                if !(c1 > 0.0 && c2 > 0.0) {
                    return Err(Error::domain("decay constants must be positive"));
                }
                (c1, c2)
            }
            None => {
                let c1 = values
                    .iter()
                    .map(|(d, v)| v.abs() * (lattice_norm(d) as f64).exp())
                    .fold(0.0f64, f64::max);
                (if c1 > 0.0 { c1 } else { 1.0 }, 1.0)
            }
        };
        let kernel = Self {
            dim,
            values,
            range,
            decay,
        };
        kernel.check_decay()?;
        Ok(kernel)
    }

    /// `K = value` on the `2d` unit displacements.
    pub fn nearest_neighbor(dim: usize, value: f64) -> Result<Self> {
        let entries = (0..dim).map(|k| {
            let mut e = vec![0; dim];
            e[k] = 1;
            (e, value)
        });
        let c1 = if value == 0.0 { 1.0 } else { value.abs() * 1f64.exp() };
        Self::from_entries(dim, entries, Some((c1, 1.0)))
    }

    /// `K(i) = C1 exp(-C2 |i|)` for `0 < |i| <= R`.
    pub fn exponential(dim: usize, c1: f64, c2: f64, range: u32) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::domain("decay constants must be positive"));
        }
        let r = range as i64;
        let ball = BoxGeometry::cube(dim, range)?;
        let entries: Vec<(Site, f64)> = ball
            .sites()
            .iter()
            .filter(|s| {
                let n = lattice_norm(s);
                n > 0 && n <= r
            })
            .map(|s| (s.clone(), c1 * (-c2 * lattice_norm(s) as f64).exp()))
            .collect();
        Self::from_entries(dim, entries, Some((c1, c2)))
    }

    /// The kernel with no interaction.
    pub fn zero(dim: usize) -> Result<Self> {
        Self::from_entries(dim, std::iter::empty(), Some((1.0, 1.0)))
    }

    /// Parse a named kernel (`nn`, `exp:C1:C2:R`) or a kernel table.
    ///
    /// Tables hold one `dx .. dz value` entry per line; `#` starts a comment,
    /// except for the directive `# decay C1 C2`.
    pub fn parse_spec(spec: &str, dim: usize) -> Result<Self> {
        let trimmed = spec.trim();
        if trimmed == "nn" {
            return Self::nearest_neighbor(dim, 1.0);
        }
        if trimmed == "none" || trimmed == "zero" {
            return Self::zero(dim);
        }
        if let Some(rest) = trimmed.strip_prefix("exp:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected exp:C1:C2:R".into(),
                });
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: 1,
                    message: format!("bad number {s:?}: {e}"),
                })
            };
            let r = parts[2].parse::<u32>().map_err(|e| Error::Parse {
                line: 1,
                message: format!("bad range {:?}: {e}", parts[2]),
            })?;
            return Self::exponential(dim, num(parts[0])?, num(parts[1])?, r);
        }
        let mut entries = Vec::new();
        let mut decay = None;
        for (lineno, raw) in spec.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let words: Vec<&str> = comment.split_whitespace().collect();
                if words.first() == Some(&"decay") {
                    if words.len() != 3 {
                        return Err(Error::Parse {
                            line: lineno + 1,
                            message: "expected '# decay C1 C2'".into(),
                        });
                    }
                    let c1 = parse_f64(words[1], lineno + 1)?;
                    let c2 = parse_f64(words[2], lineno + 1)?;
                    decay = Some((c1, c2));
                }
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            if words.len() != dim + 1 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected {} columns, found {}", dim + 1, words.len()),
                });
            }
            let disp = words[..dim]
                .iter()
                .map(|w| {
                    w.parse::<i64>().map_err(|e| Error::Parse {
                        line: lineno + 1,
                        message: format!("bad displacement {w:?}: {e}"),
                    })
                })
                .collect::<Result<Site>>()?;
            entries.push((disp, parse_f64(words[dim], lineno + 1)?));
        }
        Self::from_entries(dim, entries, decay)
    }

    /// Serialize as a kernel table that [`InteractionKernel::parse_spec`] reads back.
    pub fn to_table(&self) -> String {
        let mut out = format!("# decay {} {}\n", self.decay.0, self.decay.1);
        for (d, v) in &self.values {
            for x in d {
                out.push_str(&format!("{x} "));
            }
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    fn check_decay(&self) -> Result<()> {
        let (c1, c2) = self.decay;
        for (d, v) in &self.values {
            let bound = c1 * (-c2 * lattice_norm(d) as f64).exp();
            if v.abs() > bound * (1.0 + 1e-12) {
                return Err(Error::domain(format!(
                    "|K({d:?})| = {} exceeds the decay bound {bound}",
                    v.abs()
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Truncation radius: `K(i) = 0` for `|i| > range`.
    pub fn range(&self) -> i64 {
        self.range
    }

    pub fn decay_constants(&self) -> (f64, f64) {
        self.decay
    }

    pub fn value(&self, disp: &[i64]) -> f64 {
        self.values.get(disp).copied().unwrap_or(0.0)
    }

    /// Nonzero entries, each displacement once together with its mirror.
    pub fn entries(&self) -> impl Iterator<Item = (&Site, f64)> {
        self.values.iter().map(|(d, v)| (d, *v))
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    /// True when the only nonzero entries are the two displacements `±1` of a chain.
    pub fn is_chain_nearest_neighbor(&self) -> bool {
        self.dim == 1 && self.values.keys().all(|d| d[0].abs() == 1)
    }

    /// `Σ_{i≠0} |K(i)|`.
    pub fn kernel_sum(&self) -> f64 {
        self.values.values().map(|v| v.abs()).sum()
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|e| Error::Parse {
        line,
        message: format!("bad number {s:?}: {e}"),
    })
}

pub fn kernel_sum(kernel: &InteractionKernel) -> f64 {
    kernel.kernel_sum()
}

/// Upper bound `|tanh(2 κ K(k-i))|` on the influence coefficient `C_ki`.
pub fn dobrushin_coefficient_bound(
    kernel: &InteractionKernel,
    kappa: f64,
    displacement: &[i64],
) -> Result<f64> {
    if displacement.iter().all(|&x| x == 0) {
        return Err(Error::domain("self-influence is undefined"));
    }
    if displacement.len() != kernel.dim() {
        return Err(Error::domain("displacement dimension mismatch"));
    }
    Ok((2.0 * kappa * kernel.value(displacement)).tanh().abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DobrushinReport {
    pub kernel_sum: f64,
    /// `(2 Σ|K|)^{-1}`, or `+∞` for the zero kernel.
    pub kappa1: f64,
    pub kappa: f64,
    pub inside: bool,
    /// `sup_i Σ_k` of the coefficient bounds.
    pub max_row_sum: f64,
    range: i64,
}

impl DobrushinReport {
    /// Decay length of correlations implied by the row sum contraction,
    /// `R / (-ln a)`. `None` outside the contraction regime.
    pub fn correlation_length(&self) -> Option<f64> {
        let a = self.max_row_sum;
        if a == 0.0 {
            Some(0.0)
        } else if a < 1.0 {
            Some(self.range as f64 / -a.ln())
        } else {
            None
        }
    }
}

pub fn uniqueness_check(kernel: &InteractionKernel, kappa: f64) -> Result<DobrushinReport> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::domain(format!("kappa must be finite and >= 0, got {kappa}")));
    }
    let sum = kernel.kernel_sum();
    let kappa1 = if sum > 0.0 { 1.0 / (2.0 * sum) } else { f64::INFINITY };
    let max_row_sum = kernel
        .entries()
        .map(|(_, v)| (2.0 * kappa * v).tanh().abs())
        .sum();
    Ok(DobrushinReport {
        kernel_sum: sum,
        kappa1,
        kappa,
        inside: kappa < kappa1,
        max_row_sum,
        range: kernel.range(),
    })
}
