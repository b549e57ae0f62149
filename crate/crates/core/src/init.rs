//! Starting layouts for the optimizer: random noise, PCA projection, FastICA
//! sources, or the average of PCA and sign/scale-aligned ICA.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::FeatureMatrix;

/// Standard deviation every initialization is rescaled to before optimizing.
pub const DEFAULT_INIT_STD: f64 = 1e-4;

/// Feature dimension up to which PCA eigensolves the full covariance matrix.
const DENSE_PCA_MAX_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Random,
    Pca,
    Ica,
    Ensemble,
    Optimizer,
}

/// Initialization strategies selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Random,
    Pca,
    Ica,
    Ensemble,
}

impl InitKind {
    pub const ALL: [InitKind; 4] = [InitKind::Random, InitKind::Pca, InitKind::Ica, InitKind::Ensemble];

    pub fn as_str(self) -> &'static str {
        match self {
            InitKind::Random => "random",
            InitKind::Pca => "pca",
            InitKind::Ica => "ica",
            InitKind::Ensemble => "ensemble",
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown init `{s}`")))
    }
}

/// `N x 2` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub coords: Array2<f64>,
    pub provenance: Provenance,
}

impl Embedding {
    pub fn new(coords: Array2<f64>, provenance: Provenance) -> Result<Self> {
        if coords.ncols() != 2 {
            return Err(Error::arg(format!("embedding must have 2 columns, got {}", coords.ncols())));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::degenerate("embedding has non-finite coordinates"));
        }
        Ok(Self { coords, provenance })
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }
}

/// Population mean and standard deviation.
fn mean_std(v: ArrayView1<f64>) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pearson correlation; zero when either side is constant.
pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    if sa == 0.0 || sb == 0.0 {
        return 0.0;
    }
    let cov = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    cov / (sa * sb)
}

/// I.i.d. `Normal(0, 1e-4^2)` coordinates.
pub fn random_init(n: usize, seed: u64) -> Result<Embedding> {
    if n == 0 {
        return Err(Error::arg("random_init needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, DEFAULT_INIT_STD).expect("valid std");
    let coords = Array2::from_shape_simple_fn((n, 2), || normal.sample(&mut rng));
    Embedding::new(coords, Provenance::Random)
}

/// Top two principal axes of a centered matrix.
struct PrincipalAxes {
    /// `D x 2`, unit columns, sign-normalized.
    directions: Array2<f64>,
    singular: [f64; 2],
}

fn center(x: &FeatureMatrix) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    x - &mean.insert_axis(Axis(0))
}

/// Eigenpairs of a small symmetric matrix, sorted by decreasing eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[[r, c]])
}

/// Modified Gram-Schmidt on the columns of `m`, in place. Columns that
/// collapse numerically are replaced by zero.
fn orthonormalize(m: &mut Array2<f64>) {
    for c in 0..m.ncols() {
        for prev in 0..c {
            let dot = m.column(prev).dot(&m.column(c));
            let p = m.column(prev).to_owned();
            m.column_mut(c).scaled_add(-dot, &p);
        }
        let norm = m.column(c).dot(&m.column(c)).sqrt();
        if norm > 1e-300 {
            m.column_mut(c).mapv_inplace(|v| v / norm);
        } else {
            m.column_mut(c).fill(0.0);
        }
    }
}

fn dense_axes(xc: &Array2<f64>) -> ([f64; 2], Array2<f64>) {
    let cov = xc.t().dot(xc);
    let (values, vectors) = sorted_eigen(to_dmatrix(&cov));
    let d = xc.ncols();
    let dirs = Array2::from_shape_fn((d, 2), |(r, c)| vectors[(r, c)]);
    ([values[0], values[1]], dirs)
}

/// Block subspace iteration with Rayleigh-Ritz on `xc^T xc`, never forming
/// the `D x D` covariance.
fn iterative_axes(xc: &Array2<f64>) -> ([f64; 2], Array2<f64>) {
    let (n, d) = xc.dim();
    let block = 12.min(d).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut basis = Array2::from_shape_simple_fn((d, block), || StandardNormal.sample(&mut rng));
    orthonormalize(&mut basis);
    let mut values: Vec<f64> = vec![0.0; block];

    for iter in 0..2000 {
        let applied = xc.t().dot(&xc.dot(&basis));
        if iter > 0 {
            let scale = values[0].abs().max(f64::MIN_POSITIVE);
            let converged = (0..2).all(|c| {
                let resid = &applied.column(c) - &(&basis.column(c) * values[c]);
                resid.dot(&resid).sqrt() <= 1e-11 * scale
            });
            if converged {
                break;
            }
        }
        let mut next = applied;
        orthonormalize(&mut next);
        let projected = xc.dot(&next);
        let gram = projected.t().dot(&projected);
        let (vals, vecs) = sorted_eigen(to_dmatrix(&gram));
        let rot = Array2::from_shape_fn((block, block), |(r, c)| vecs[(r, c)]);
        basis = next.dot(&rot);
        values = vals;
    }
    let dirs = basis.slice(s![.., 0..2]).to_owned();
    ([values[0], values[1]], dirs)
}

fn principal_axes(xc: &Array2<f64>) -> Result<PrincipalAxes> {
    let (eigen, mut directions) = if xc.ncols() <= DENSE_PCA_MAX_DIM {
        dense_axes(xc)
    } else {
        iterative_axes(xc)
    };
    let singular = [eigen[0].max(0.0).sqrt(), eigen[1].max(0.0).sqrt()];
    let scale = xc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if singular[0] <= 1e-12 * scale.max(f64::MIN_POSITIVE) || singular[1] <= 1e-10 * singular[0] {
        return Err(Error::degenerate("data has rank < 2"));
    }
    for mut col in directions.columns_mut() {
        let (mut best, mut arg) = (0.0, 0);
        for (j, v) in col.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                arg = j;
            }
        }
        if col[arg] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    Ok(PrincipalAxes {
        directions,
        singular,
    })
}

fn check_shape(x: &FeatureMatrix, min_rows: usize) -> Result<()> {
    if x.nrows() < min_rows || x.ncols() < 2 {
        return Err(Error::arg(format!(
            "need at least {min_rows} points of dimension >= 2, got {:?}",
            x.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("features contain non-finite values"));
    }
    Ok(())
}

/// Projection of the centered data onto its top two principal axes. Each
/// axis is oriented so its largest-magnitude loading is positive.
pub fn pca_init(x: &FeatureMatrix) -> Result<Embedding> {
    check_shape(x, 2)?;
    let xc = center(x);
    let axes = principal_axes(&xc)?;
    Embedding::new(xc.dot(&axes.directions), Provenance::Pca)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaParams {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IcaParams {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

/// Convergence record for a FastICA run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcaReport {
    pub converged: bool,
    pub iterations: usize,
}

/// `(W W^T)^{-1/2} W`
fn symmetric_decorrelation(w: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let eig = SymmetricEigen::new(w * w.transpose());
    if eig.eigenvalues.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
        return Err(Error::degenerate("ICA unmixing matrix became singular"));
    }
    let inv_sqrt = Matrix2::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * w)
}

/// Two-component FastICA (log-cosh contrast, symmetric decorrelation).
pub fn ica_init_with(x: &FeatureMatrix, seed: u64, params: &IcaParams) -> Result<(Embedding, IcaReport)> {
    check_shape(x, 3)?;
    let n = x.nrows();
    let xc = center(x);
    let axes = principal_axes(&xc)?;
    let mut white = xc.dot(&axes.directions);
    let root_n = (n as f64).sqrt();
    for (c, mut col) in white.columns_mut().into_iter().enumerate() {
        let k = root_n / axes.singular[c];
        col.mapv_inplace(|v| v * k);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Matrix2::from_fn(|_, _| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&start)?;
    let mut report = IcaReport {
        converged: false,
        iterations: 0,
    };
    let nf = n as f64;
    for iter in 1..=params.max_iter {
        let mut next = Matrix2::zeros();
        for c in 0..2 {
            let wc = Array1::from(vec![w[(c, 0)], w[(c, 1)]]);
            let proj = white.dot(&wc);
            let g = proj.mapv(f64::tanh);
            let g_prime_mean = g.iter().map(|v| 1.0 - v * v).sum::<f64>() / nf;
            let expect = white.t().dot(&g) / nf;
            next[(c, 0)] = expect[0] - g_prime_mean * w[(c, 0)];
            next[(c, 1)] = expect[1] - g_prime_mean * w[(c, 1)];
        }
        let next = symmetric_decorrelation(&next)?;
        let lim = (0..2)
            .map(|c| ((next.row(c).dot(&w.row(c))).abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = next;
        report.iterations = iter;
        if lim < params.tol {
            report.converged = true;
            break;
        }
    }
    let unmix = Array2::from_shape_fn((2, 2), |(r, c)| w[(c, r)]);
    Ok((Embedding::new(white.dot(&unmix), Provenance::Ica)?, report))
}

/// [`ica_init_with`] at the default tolerance (1e-6) and 500 iterations.
pub fn ica_init(x: &FeatureMatrix, seed: u64) -> Result<(Embedding, IcaReport)> {
    ica_init_with(x, seed, &IcaParams::default())
}

/// How PCA and ICA layouts are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    /// Match, sign-flip and rescale ICA columns to the PCA columns first.
    #[default]
    Aligned,
    /// Plain element-wise average.
    Raw,
}

impl FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aligned" => Ok(EnsembleMode::Aligned),
            "raw" => Ok(EnsembleMode::Raw),
            _ => Err(Error::arg(format!("unknown ensemble mode `{s}`"))),
        }
    }
}

impl fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnsembleMode::Aligned => "aligned",
            EnsembleMode::Raw => "raw",
        })
    }
}

/// Reorders, sign-flips and rescales the columns of `candidate` to match
/// `reference`: each reference column, in order, claims the unclaimed
/// candidate column with the largest absolute correlation.
pub fn align_columns(reference: &Array2<f64>, candidate: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(reference.raw_dim());
    let mut claimed = vec![false; candidate.ncols()];
    for (c, target) in reference.columns().into_iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, col) in candidate.columns().into_iter().enumerate() {
            if claimed[j] {
                continue;
            }
            let r = pearson(target, col);
            if best.is_none_or(|(_, b)| r.abs() > b.abs()) {
                best = Some((j, r));
            }
        }
        let (j, r) = best.ok_or_else(|| Error::arg("candidate has too few columns"))?;
        claimed[j] = true;
        let (_, target_std) = mean_std(target);
        let (_, cand_std) = mean_std(candidate.column(j));
        if cand_std == 0.0 {
            return Err(Error::degenerate(format!("candidate column {j} is constant")));
        }
        let k = if r < 0.0 { -1.0 } else { 1.0 } * target_std / cand_std;
        out.column_mut(c).assign(&candidate.column(j).mapv(|v| v * k));
    }
    Ok(out)
}

/// Average of the PCA layout and the (by default aligned) ICA layout.
pub fn ensemble_init(x: &FeatureMatrix, seed: u64, mode: EnsembleMode) -> Result<(Embedding, IcaReport)> {
    let pca = pca_init(x)?;
    let (ica, report) = ica_init(x, seed)?;
    let other = match mode {
        EnsembleMode::Aligned => align_columns(&pca.coords, &ica.coords)?,
        EnsembleMode::Raw => ica.coords,
    };
    let coords = (&pca.coords + &other) * 0.5;
    Ok((Embedding::new(coords, Provenance::Ensemble)?, report))
}

/// Centers each column and scales it to standard deviation `target_std`.
pub fn rescale_init(e: &Embedding, target_std: f64) -> Result<Embedding> {
    if !(target_std > 0.0 && target_std.is_finite()) {
        return Err(Error::arg(format!("target_std must be positive, got {target_std}")));
    }
    let mut coords = e.coords.clone();
    for (c, mut col) in coords.columns_mut().into_iter().enumerate() {
        let (mean, std) = mean_std(col.view());
        if !(std > 0.0) {
            return Err(Error::degenerate(format!("embedding column {c} has zero variance")));
        }
        let k = target_std / std;
        col.mapv_inplace(|v| (v - mean) * k);
    }
    Embedding::new(coords, e.provenance)
}
