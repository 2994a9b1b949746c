//! Quenched Gaussian disorder with label-addressed random streams.
//!
//! Every stream is a ChaCha8 generator keyed by SHA-256 of
//! `(master_seed, purpose, labels...)`. Gaussians are drawn with the
//! ziggurat sampler of `rand_distr::StandardNormal`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::BoxGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    Couplings,
    Fields,
    SiteResample,
    Chain,
    Auxiliary,
}

impl StreamPurpose {
    fn tag(self) -> u8 {
        match self {
            StreamPurpose::Couplings => 1,
            StreamPurpose::Fields => 2,
            StreamPurpose::SiteResample => 3,
            StreamPurpose::Chain => 4,
            StreamPurpose::Auxiliary => 5,
        }
    }
}

/// Pure map from `(master_seed, purpose, labels)` to an RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedDerivation {
    pub master_seed: u64,
}

impl SeedDerivation {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn key(&self, purpose: StreamPurpose, labels: &[u64]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"isk.stream.v1");
        h.update(self.master_seed.to_le_bytes());
        h.update([purpose.tag()]);
        h.update((labels.len() as u64).to_le_bytes());
        for l in labels {
            h.update(l.to_le_bytes());
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(h.finalize().as_slice());
        out
    }

    pub fn rng(&self, purpose: StreamPurpose, labels: &[u64]) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key(purpose, labels))
    }

    /// A 64-bit seed for a child derivation.
    pub fn child_seed(&self, purpose: StreamPurpose, labels: &[u64]) -> u64 {
        let k = self.key(purpose, labels);
        u64::from_le_bytes(k[..8].try_into().expect("8 bytes"))
    }
}

pub fn standard_normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// One realization of the pair couplings `J_ij` (all ordered pairs,
/// diagonal included, row-major) and site fields `J_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderSample {
    volume: usize,
    couplings: Vec<f64>,
    fields: Vec<f64>,
    pub master_seed: u64,
    pub sample_index: u64,
}

impl DisorderSample {
    /// Assemble from explicit values, e.g. in tests.
    pub fn from_parts(
        couplings: Vec<f64>,
        fields: Vec<f64>,
        master_seed: u64,
        sample_index: u64,
    ) -> Result<Self> {
        let n = fields.len();
        if couplings.len() != n * n {
            return Err(Error::domain(format!(
                "expected {} couplings for {n} sites, got {}",
                n * n,
                couplings.len()
            )));
        }
        Ok(Self {
            volume: n,
            couplings,
            fields,
            master_seed,
            sample_index,
        })
    }

    pub fn volume(&self) -> usize {
        self.volume
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings[i * self.volume + j]
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    /// Copy with the site fields replaced.
    pub fn with_fields(&self, fields: Vec<f64>) -> Result<Self> {
        if fields.len() != self.volume {
            return Err(Error::domain("field vector length mismatch"));
        }
        Ok(Self {
            fields,
            ..self.clone()
        })
    }

    /// Text table: header with provenance, then `i j value` and `i value` rows.
    pub fn to_table(&self, geometry: &BoxGeometry) -> String {
        let join = |v: &[i64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        out.push_str("# isk-disorder v1\n");
        out.push_str(&format!("# master_seed {}\n", self.master_seed));
        out.push_str(&format!("# sample_index {}\n", self.sample_index));
        out.push_str(&format!(
            "# geometry {} {}\n",
            join(geometry.lower()),
            join(geometry.upper())
        ));
        out.push_str("couplings\n");
        let n = self.volume;
        for i in 0..n {
            for j in 0..n {
                out.push_str(&format!("{i} {j} {:e}\n", self.coupling(i, j)));
            }
        }
        out.push_str("fields\n");
        for (i, v) in self.fields.iter().enumerate() {
            out.push_str(&format!("{i} {v:e}\n"));
        }
        out
    }

    /// Inverse of [`DisorderSample::to_table`]; values are restored bit-exactly.
    pub fn from_table(text: &str) -> Result<(Self, BoxGeometry)> {
        let perr = |line: usize, message: String| Error::Parse { line, message };
        let mut master_seed = None;
        let mut sample_index = None;
        let mut geometry = None;
        let mut section = 0u8;
        let mut couplings = Vec::new();
        let mut fields = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let ln = k + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let w: Vec<&str> = rest.split_whitespace().collect();
                match w.first().copied() {
                    Some("master_seed") if w.len() == 2 => {
                        master_seed =
                            Some(w[1].parse::<u64>().map_err(|e| perr(ln, e.to_string()))?)
                    }
                    Some("sample_index") if w.len() == 2 => {
                        sample_index =
                            Some(w[1].parse::<u64>().map_err(|e| perr(ln, e.to_string()))?)
                    }
                    Some("geometry") if w.len() == 3 => {
                        let parse = |s: &str| {
                            s.split(',')
                                .map(|x| x.parse::<i64>().map_err(|e| perr(ln, e.to_string())))
                                .collect::<Result<Vec<i64>>>()
                        };
                        geometry = Some(BoxGeometry::rect(parse(w[1])?, parse(w[2])?)?);
                    }
                    _ => {}
                }
                continue;
            }
            match line {
                "couplings" => section = 1,
                "fields" => section = 2,
                _ => {
                    let w: Vec<&str> = line.split_whitespace().collect();
                    let val = |s: &str| s.parse::<f64>().map_err(|e| perr(ln, e.to_string()));
                    match (section, w.len()) {
                        (1, 3) => couplings.push(val(w[2])?),
                        (2, 2) => fields.push(val(w[1])?),
                        _ => return Err(perr(ln, format!("unexpected row {line:?}"))),
                    }
                }
            }
        }
        let geometry = geometry.ok_or_else(|| perr(0, "missing geometry header".into()))?;
        let sample = Self::from_parts(
            couplings,
            fields,
            master_seed.ok_or_else(|| perr(0, "missing master_seed".into()))?,
            sample_index.ok_or_else(|| perr(0, "missing sample_index".into()))?,
        )?;
        if sample.volume != geometry.volume() {
            return Err(perr(0, "geometry does not match the table size".into()));
        }
        Ok((sample, geometry))
    }
}

/// Site fields `J_i` of sample `sample_index`; identical to
/// `sample_disorder(..).fields()` without drawing the couplings.
pub fn sample_fields(volume: usize, master_seed: u64, sample_index: u64) -> Vec<f64> {
    let mut rng = SeedDerivation::new(master_seed).rng(StreamPurpose::Fields, &[sample_index]);
    standard_normals(&mut rng, volume)
}

pub fn sample_disorder(geometry: &BoxGeometry, master_seed: u64, sample_index: u64) -> DisorderSample {
    let n = geometry.volume();
    let seeds = SeedDerivation::new(master_seed);
    let mut rng = seeds.rng(StreamPurpose::Couplings, &[sample_index]);
    let couplings = standard_normals(&mut rng, n * n);
    DisorderSample {
        volume: n,
        couplings,
        fields: sample_fields(n, master_seed, sample_index),
        master_seed,
        sample_index,
    }
}

/// An independent copy `J'` of the field at `site`.
pub fn resample_site_field(
    sample: &DisorderSample,
    geometry: &BoxGeometry,
    site: &[i64],
    aux_seed: u64,
) -> Result<f64> {
    let idx = geometry
        .index_of(site)
        .ok_or_else(|| Error::domain(format!("site {site:?} outside the box")))?;
    let mut rng = SeedDerivation::new(sample.master_seed).rng(
        StreamPurpose::SiteResample,
        &[sample.sample_index, idx as u64, aux_seed],
    );
    Ok(rng.sample(StandardNormal))
}
