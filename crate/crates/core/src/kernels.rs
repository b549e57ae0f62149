//! Similarity kernels and their conversion into the joint distribution `P`
//! that the optimizer matches.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{infer_alphabet, sparse_spectrum};
use crate::ingest::SequenceRecord;
use crate::pairwise::{self, manhattan, ordered_sum};
use crate::FeatureMatrix;

/// Bisection budget and target accuracy for perplexity calibration.
pub const PERPLEXITY_MAX_STEPS: usize = 200;
pub const PERPLEXITY_TOL: f64 = 1e-5;

pub const DEFAULT_PERPLEXITY: f64 = 250.0;
pub const DEFAULT_ISOLATION_PSI: usize = 16;
pub const DEFAULT_ISOLATION_ROUNDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
    Isolation,
    Laplacian,
    Approximate,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Gaussian,
        KernelKind::Isolation,
        KernelKind::Laplacian,
        KernelKind::Approximate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Isolation => "isolation",
            KernelKind::Laplacian => "laplacian",
            KernelKind::Approximate => "approximate",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown kernel `{s}`")))
    }
}

/// How a kernel matrix is turned into a joint distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointMode {
    /// Row-normalize to conditionals, then symmetrize like the Gaussian path.
    #[default]
    RowNormalize,
    /// Zero the diagonal and divide by the total.
    GlobalNormalize,
}

impl FromStr for JointMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row-normalize" => Ok(JointMode::RowNormalize),
            "global-normalize" => Ok(JointMode::GlobalNormalize),
            _ => Err(Error::arg(format!("unknown joint mode `{s}`"))),
        }
    }
}

impl fmt::Display for JointMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JointMode::RowNormalize => "row-normalize",
            JointMode::GlobalNormalize => "global-normalize",
        })
    }
}

/// Symmetric, nonnegative `N x N` similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: Array2<f64>,
    pub kind: KernelKind,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

/// Symmetric probability matrix with zero diagonal summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    values: Array2<f64>,
}

impl JointDistribution {
    /// Wraps `values` after checking every invariant.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let p = Self { values };
        p.validate()?;
        Ok(p)
    }

    pub(crate) fn new_unchecked(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.values;
        let n = v.nrows();
        if v.ncols() != n || n < 2 {
            return Err(Error::arg(format!("joint distribution must be square with N >= 2, got {:?}", v.dim())));
        }
        for i in 0..n {
            if v[[i, i]] != 0.0 {
                return Err(Error::degenerate(format!("P has nonzero diagonal at row {i}")));
            }
            for j in (i + 1)..n {
                let (a, b) = (v[[i, j]], v[[j, i]]);
                if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(Error::degenerate(format!("P has invalid entry at ({i}, {j})")));
                }
                if (a - b).abs() >= 1e-12 {
                    return Err(Error::degenerate(format!("P is not symmetric at ({i}, {j})")));
                }
            }
        }
        let total = ordered_sum(v);
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::degenerate(format!("P sums to {total}, not 1")));
        }
        Ok(())
    }
}

/// `(C + C^T) / (2N)` for a row-stochastic conditional matrix `C`.
fn symmetrize_conditionals(cond: &Array2<f64>) -> Array2<f64> {
    let n = cond.nrows();
    let scale = 2.0 * n as f64;
    pairwise::symmetric(n, 0.0, |i, j| (cond[[i, j]] + cond[[j, i]]) / scale)
}

/// Per-row result of perplexity calibration.
#[derive(Debug, Clone)]
pub struct Calibration {
    /// Row-stochastic conditionals `p_{j|i}` with zero diagonal.
    pub conditionals: Array2<f64>,
    /// Precision `1 / (2 sigma_i^2)` chosen for each row.
    pub betas: Vec<f64>,
    /// Achieved perplexity `2^H` for each row.
    pub perplexities: Vec<f64>,
}

/// Conditional distribution of one row for a given precision; returns the
/// probabilities (self slot zero) and their perplexity.
fn row_distribution(dist: &[f64], skip: usize, dmin: f64, beta: f64, out: &mut [f64]) -> f64 {
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == skip {
            *o = 0.0;
            continue;
        }
        let shifted = d - dmin;
        let e = (-beta * shifted).exp();
        *o = e;
        z += e;
        weighted += e * shifted;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
    // Entropy in nats: ln Z + beta * E[d - dmin]; perplexity 2^H_bits = e^H_nats.
    (z.ln() + beta * weighted / z).exp()
}

fn calibrate_row(dist: &[f64], i: usize, perplexity: f64, out: &mut [f64]) -> Result<(f64, f64)> {
    let mut dmin = f64::INFINITY;
    let mut dsum = 0.0;
    for (j, &d) in dist.iter().enumerate() {
        if j != i {
            dmin = dmin.min(d);
            dsum += d;
        }
    }
    let m = (dist.len() - 1) as f64;
    let spread = dsum / m - dmin;
    if spread <= 0.0 && dmin == 0.0 {
        return Err(Error::degenerate(format!(
            "row {i}: every other point coincides with it"
        )));
    }

    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
    let mut best = (f64::INFINITY, beta);
    for _ in 0..PERPLEXITY_MAX_STEPS {
        let perp = row_distribution(dist, i, dmin, beta, out);
        let err = (perp - perplexity).abs();
        if err < best.0 {
            best = (err, beta);
        }
        if err < PERPLEXITY_TOL {
            return Ok((beta, perp));
        }
        if perp > perplexity {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (lo + hi);
        }
    }
    let beta = best.1;
    let perp = row_distribution(dist, i, dmin, beta, out);
    Ok((beta, perp))
}

/// Calibrates one Gaussian precision per row against squared distances.
pub fn calibrate_perplexity(sq_dist: &Array2<f64>, perplexity: f64) -> Result<Calibration> {
    let n = sq_dist.nrows();
    let mut conditionals = Array2::zeros((n, n));
    let rows: Vec<Result<(f64, f64)>> = conditionals
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, mut row)| {
            let dist = sq_dist.row(i);
            let dist = dist.as_slice().expect("standard layout");
            calibrate_row(dist, i, perplexity, row.as_slice_mut().expect("standard layout"))
        })
        .collect();
    let mut betas = Vec::with_capacity(n);
    let mut perplexities = Vec::with_capacity(n);
    for r in rows {
        let (b, p) = r?;
        betas.push(b);
        perplexities.push(p);
    }
    Ok(Calibration {
        conditionals,
        betas,
        perplexities,
    })
}

fn check_perplexity(n: usize, perplexity: f64) -> Result<()> {
    if n < 4 {
        return Err(Error::arg(format!("gaussian kernel needs N >= 4, got {n}")));
    }
    let max = (n - 1) as f64;
    if !(perplexity > 1.0 && perplexity < max) {
        return Err(Error::arg(format!(
            "perplexity must lie in (1, {max}) for N = {n}, got {perplexity}"
        )));
    }
    Ok(())
}

/// Gaussian conditionals with per-point bandwidths matched to `perplexity`.
pub fn gaussian_conditionals(x: &FeatureMatrix, perplexity: f64) -> Result<Calibration> {
    check_perplexity(x.nrows(), perplexity)?;
    calibrate_perplexity(&pairwise::squared_distance_matrix(x), perplexity)
}

/// Standard t-SNE input affinities: perplexity-calibrated Gaussian
/// conditionals, symmetrized.
pub fn gaussian_joint(x: &FeatureMatrix, perplexity: f64) -> Result<JointDistribution> {
    let cal = gaussian_conditionals(x, perplexity)?;
    JointDistribution::new(symmetrize_conditionals(&cal.conditionals))
}

/// Cell index of every point for one random Voronoi partition.
fn voronoi_cells(x: &FeatureMatrix, psi: usize, seed: u64) -> Vec<u32> {
    let n = x.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = rand::seq::index::sample(&mut rng, n, psi).into_vec();
    centers.sort_unstable();
    (0..n)
        .map(|i| {
            let row = x.row(i);
            let mut best = (f64::INFINITY, 0u32);
            for (c, &center) in centers.iter().enumerate() {
                let d = pairwise::squared_euclidean(row, x.row(center));
                if d < best.0 {
                    best = (d, c as u32);
                }
            }
            best.1
        })
        .collect()
}

/// Isolation kernel: fraction of `t` random `psi`-center Voronoi partitions
/// in which two points share a cell. Round `r` draws its centers from
/// `seed + r`; ties in the nearest-center search go to the lowest row index.
pub fn isolation_kernel(x: &FeatureMatrix, psi: usize, t: usize, seed: u64) -> Result<KernelMatrix> {
    let n = x.nrows();
    if psi == 0 || psi > n {
        return Err(Error::arg(format!("psi must lie in [1, N = {n}], got {psi}")));
    }
    if t == 0 {
        return Err(Error::arg("isolation kernel needs at least one partition"));
    }
    let cells: Vec<Vec<u32>> = (0..t as u64)
        .into_par_iter()
        .map(|r| voronoi_cells(x, psi, seed.wrapping_add(r)))
        .collect();
    let members: Vec<Vec<Vec<u32>>> = cells
        .par_iter()
        .map(|assign| {
            let mut m = vec![Vec::new(); psi];
            for (i, &c) in assign.iter().enumerate() {
                m[c as usize].push(i as u32);
            }
            m
        })
        .collect();

    let mut counts = Array2::<u32>::zeros((n, n));
    counts
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for (assign, cell_members) in cells.iter().zip(&members) {
                for &j in &cell_members[assign[i] as usize] {
                    row[j as usize] += 1;
                }
            }
        });
    let t = t as f64;
    Ok(KernelMatrix {
        values: counts.mapv(|c| c as f64 / t),
        kind: KernelKind::Isolation,
    })
}

/// `exp(-|x - y|_1 / (2 sigma^2))`.
pub fn laplacian_kernel(x: &FeatureMatrix, sigma: f64) -> Result<KernelMatrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("sigma must be positive, got {sigma}")));
    }
    let denom = 2.0 * sigma * sigma;
    let values = pairwise::symmetric(x.nrows(), 1.0, |i, j| {
        (-manhattan(x.row(i), x.row(j)) / denom).exp()
    });
    Ok(KernelMatrix {
        values,
        kind: KernelKind::Laplacian,
    })
}

/// Data-adaptive Laplacian width: half the mean pairwise L1 distance.
pub fn default_laplacian_sigma(x: &FeatureMatrix) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::arg("need at least two points to choose sigma"));
    }
    let row_sums: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| manhattan(x.row(i), x.row(j))).sum())
        .collect();
    let pairs = (n * (n - 1) / 2) as f64;
    let sigma = row_sums.iter().sum::<f64>() / pairs / 2.0;
    if sigma > 0.0 {
        Ok(sigma)
    } else {
        Err(Error::degenerate("all points coincide; no sigma is meaningful"))
    }
}

/// Spectrum-kernel normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumNorm {
    /// Cosine similarity of the spectra; unit diagonal.
    #[default]
    Cosine,
    /// Raw dot products.
    Raw,
}

impl FromStr for SpectrumNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SpectrumNorm::Cosine),
            "raw" => Ok(SpectrumNorm::Raw),
            _ => Err(Error::arg(format!("unknown spectrum normalization `{s}`"))),
        }
    }
}

impl fmt::Display for SpectrumNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpectrumNorm::Cosine => "cosine",
            SpectrumNorm::Raw => "raw",
        })
    }
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Exact-match (`m = 0`) spectrum kernel over k-mer counts.
pub fn approximate_kernel(
    records: &[SequenceRecord],
    k: usize,
    m: usize,
    norm: SpectrumNorm,
) -> Result<KernelMatrix> {
    if m > 0 {
        return Err(Error::Unsupported(format!(
            "mismatch count m = {m}; only exact-match spectra (m = 0) are supported"
        )));
    }
    let alphabet = infer_alphabet(records)?;
    let spectra: Vec<Result<Vec<(usize, f64)>>> = records
        .par_iter()
        .map(|r| {
            sparse_spectrum(&r.sequence, k, &alphabet).map_err(|e| match e {
                Error::UnknownSymbol { symbol, position, .. } => Error::UnknownSymbol {
                    id: r.id.clone(),
                    symbol,
                    position,
                },
                Error::Argument(msg) => Error::Argument(format!("record `{}`: {msg}", r.id)),
                e => e,
            })
        })
        .collect();
    let spectra = spectra.into_iter().collect::<Result<Vec<_>>>()?;
    let self_dots: Vec<f64> = spectra.iter().map(|s| sparse_dot(s, s)).collect();
    let norms: Vec<f64> = self_dots.iter().map(|d| d.sqrt()).collect();

    let n = records.len();
    let mut values = pairwise::symmetric(n, 1.0, |i, j| {
        let dot = sparse_dot(&spectra[i], &spectra[j]);
        match norm {
            SpectrumNorm::Cosine => dot / (norms[i] * norms[j]),
            SpectrumNorm::Raw => dot,
        }
    });
    if norm == SpectrumNorm::Raw {
        for i in 0..n {
            values[[i, i]] = self_dots[i];
        }
    }
    Ok(KernelMatrix {
        values,
        kind: KernelKind::Approximate,
    })
}

/// Turns a similarity matrix into a joint distribution.
pub fn kernel_to_joint(k: &KernelMatrix, mode: JointMode) -> Result<JointDistribution> {
    let v = &k.values;
    let n = v.nrows();
    if v.ncols() != n || n < 2 {
        return Err(Error::arg(format!("kernel must be square with N >= 2, got {:?}", v.dim())));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (v[[i, j]], v[[j, i]]);
            if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::arg(format!("kernel entry ({i}, {j}) is negative or non-finite")));
            }
            if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(Error::arg(format!("kernel is not symmetric at ({i}, {j})")));
            }
        }
    }

    let values = match mode {
        JointMode::RowNormalize => {
            let mut cond = v.clone();
            for (i, mut row) in cond.axis_iter_mut(Axis(0)).enumerate() {
                row[i] = 0.0;
                let s: f64 = row.iter().sum();
                if s <= 0.0 {
                    return Err(Error::degenerate(format!(
                        "row {i} has no positive similarity to any other point"
                    )));
                }
                row.mapv_inplace(|x| x / s);
            }
            symmetrize_conditionals(&cond)
        }
        JointMode::GlobalNormalize => {
            let mut p = v.clone();
            for i in 0..n {
                p[[i, i]] = 0.0;
            }
            let total = ordered_sum(&p);
            if total <= 0.0 {
                return Err(Error::degenerate("kernel has no positive off-diagonal entry"));
            }
            p.mapv_inplace(|x| x / total);
            p
        }
    };
    JointDistribution::new(values)
}

/// Writes a square matrix as little-endian `u64` N followed by N^2
/// little-endian `f64` in row-major order.
pub fn write_matrix<W: Write>(mut sink: W, m: &Array2<f64>) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::arg("only square matrices can be written"));
    }
    let mut buf = Vec::with_capacity(8 + 8 * n * n);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix`].
pub fn read_matrix<R: Read>(mut source: R) -> Result<Array2<f64>> {
    let mut head = [0u8; 8];
    source.read_exact(&mut head)?;
    let n = usize::try_from(u64::from_le_bytes(head))
        .map_err(|_| Error::Format("matrix size does not fit in memory".into()))?;
    let len = n
        .checked_mul(n)
        .and_then(|l| l.checked_mul(8))
        .ok_or_else(|| Error::Format(format!("matrix size {n} overflows")))?;
    let mut bytes = Vec::new();
    source.take(len as u64 + 1).read_to_end(&mut bytes)?;
    if bytes.len() != len {
        return Err(Error::Format(format!(
            "expected {len} bytes of matrix data, found {}",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Array2::from_shape_vec((n, n), values).expect("n*n values"))
}
