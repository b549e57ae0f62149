//! Neighborhood-preservation quality of an embedding: k-ary neighborhood
//! agreement `Q(k)`, its chance-corrected rescaling `R(k)` and the
//! `1/k`-weighted area `AUC_RNX`.

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pairwise::squared_euclidean;

/// Default largest neighborhood size evaluated.
pub const DEFAULT_K_MAX: usize = 99;

/// Exact k-nearest-neighbor lists, one row per point.
///
/// Row `i` excludes `i`, is sorted by increasing distance and breaks ties by
/// ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    indices: Array2<usize>,
}

impl NeighborTable {
    /// Wraps precomputed neighbor lists, checking the structural invariants.
    pub fn from_indices(indices: Array2<usize>) -> Result<Self> {
        let n = indices.nrows();
        for (i, row) in indices.outer_iter().enumerate() {
            let mut seen = std::collections::HashSet::new();
            for &j in row {
                if j == i || j >= n || !seen.insert(j) {
                    return Err(Error::arg(format!("invalid neighbor {j} in row {i}")));
                }
            }
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &Array2<usize> {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.nrows() == 0
    }

    pub fn k_max(&self) -> usize {
        self.indices.ncols()
    }
}

fn check_k_max(n: usize, k_max: usize) -> Result<()> {
    if k_max == 0 || k_max >= n {
        return Err(Error::arg(format!("k_max must lie in [1, N - 1 = {}], got {k_max}", n.saturating_sub(1))));
    }
    Ok(())
}

/// Keeps the `k` smallest `(key, index)` pairs, in order.
fn smallest_k(mut cand: Vec<(f64, usize)>, k: usize) -> Vec<usize> {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

fn build_table<F>(n: usize, k_max: usize, key: F) -> NeighborTable
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let rows: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let cand = (0..n).filter(|&j| j != i).map(|j| (key(i, j), j)).collect();
            smallest_k(cand, k_max)
        })
        .collect();
    let flat = rows.into_iter().flatten().collect();
    NeighborTable {
        indices: Array2::from_shape_vec((n, k_max), flat).expect("k_max per row"),
    }
}

/// Brute-force Euclidean kNN over the rows of `m`.
pub fn knn_table(m: &Array2<f64>, k_max: usize) -> Result<NeighborTable> {
    check_k_max(m.nrows(), k_max)?;
    Ok(build_table(m.nrows(), k_max, |i, j| squared_euclidean(m.row(i), m.row(j))))
}

/// kNN by decreasing similarity (e.g. a kernel matrix), ties by index.
pub fn knn_from_similarity(s: &Array2<f64>, k_max: usize) -> Result<NeighborTable> {
    if s.nrows() != s.ncols() {
        return Err(Error::arg("similarity matrix must be square"));
    }
    check_k_max(s.nrows(), k_max)?;
    Ok(build_table(s.nrows(), k_max, |i, j| -s[[i, j]]))
}

fn check_pair(hd: &NeighborTable, ld: &NeighborTable) -> Result<()> {
    if hd.len() != ld.len() {
        return Err(Error::arg(format!("tables cover {} and {} points", hd.len(), ld.len())));
    }
    Ok(())
}

/// `Q(k) = sum_i |kNN_hd(i) & kNN_ld(i)| / (n k)`.
pub fn neighborhood_agreement(hd: &NeighborTable, ld: &NeighborTable, k: usize) -> Result<f64> {
    check_pair(hd, ld)?;
    let limit = hd.k_max().min(ld.k_max());
    if k == 0 || k > limit {
        return Err(Error::arg(format!("k must lie in [1, {limit}], got {k}")));
    }
    let n = hd.len();
    let shared: usize = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = hd.indices.row(i);
            let b = ld.indices.row(i);
            let a = &a.as_slice().expect("standard layout")[..k];
            b.iter().take(k).filter(|j| a.contains(j)).count()
        })
        .sum();
    Ok(shared as f64 / (n * k) as f64)
}

/// `Q(k)` for every `k = 1..=k_max` in one pass over the tables.
pub fn agreement_curve(hd: &NeighborTable, ld: &NeighborTable, k_max: usize) -> Result<Vec<f64>> {
    check_pair(hd, ld)?;
    let limit = hd.k_max().min(ld.k_max());
    if k_max == 0 || k_max > limit {
        return Err(Error::arg(format!("k_max must lie in [1, {limit}], got {k_max}")));
    }
    // A neighbor at position a in one list and b in the other is shared for
    // every k > max(a, b).
    let hist = (0..hd.len())
        .into_par_iter()
        .map(|i| {
            let mut ld_pos: Vec<(usize, usize)> = ld
                .indices
                .row(i)
                .iter()
                .take(k_max)
                .enumerate()
                .map(|(pos, &j)| (j, pos))
                .collect();
            ld_pos.sort_unstable();
            let mut h = vec![0usize; k_max];
            for (a, &j) in hd.indices.row(i).iter().take(k_max).enumerate() {
                if let Ok(at) = ld_pos.binary_search_by_key(&j, |&(idx, _)| idx) {
                    h[a.max(ld_pos[at].1)] += 1;
                }
            }
            h
        })
        .reduce(
            || vec![0usize; k_max],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let n = hd.len();
    let mut shared = 0usize;
    Ok(hist
        .iter()
        .enumerate()
        .map(|(pos, &h)| {
            shared += h;
            let k = pos + 1;
            shared as f64 / (n * k) as f64
        })
        .collect())
}

/// `R(k) = ((n - 1) Q(k) - k) / (n - 1 - k)`.
pub fn r_of_k(q: f64, n: usize, k: usize) -> Result<f64> {
    if k == 0 || k + 2 > n {
        return Err(Error::arg(format!("k must lie in [1, n - 2] for n = {n}, got {k}")));
    }
    let m = (n - 1) as f64;
    Ok((m * q - k as f64) / (m - k as f64))
}

/// `AUC_RNX = sum_k R(k)/k / sum_k 1/k`.
pub fn auc_rnx(curve: &[(usize, f64)]) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::arg("AUC of an empty curve"));
    }
    let mut ks: Vec<usize> = curve.iter().map(|&(k, _)| k).collect();
    ks.sort_unstable();
    if ks[0] == 0 || ks.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::arg("neighborhood sizes must be distinct and >= 1"));
    }
    let (num, den) = curve.iter().fold((0.0, 0.0), |(num, den), &(k, r)| {
        let w = 1.0 / k as f64;
        (num + r * w, den + w)
    });
    Ok(num / den)
}

/// `R(k)` for `k = 1..=k_max` and the resulting `AUC_RNX`.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityCurve {
    pub ks: Vec<usize>,
    pub r_values: Vec<f64>,
    pub auc_rnx: f64,
}

impl QualityCurve {
    /// Scores an LD table against an HD table over `k = 1..=k_max`.
    pub fn from_tables(hd: &NeighborTable, ld: &NeighborTable, k_max: usize) -> Result<Self> {
        let n = hd.len();
        if n < k_max + 2 {
            return Err(Error::arg(format!("N = {n} is too small for k_max = {k_max}")));
        }
        let q = agreement_curve(hd, ld, k_max)?;
        let ks: Vec<usize> = (1..=k_max).collect();
        let r_values = ks
            .iter()
            .zip(&q)
            .map(|(&k, &q)| r_of_k(q, n, k))
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(usize, f64)> = ks.iter().copied().zip(r_values.iter().copied()).collect();
        let auc_rnx = auc_rnx(&pairs)?;
        Ok(Self { ks, r_values, auc_rnx })
    }

    /// `k,R` rows followed by a single `auc_rnx,<value>` line.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "k,R")?;
        for (k, r) in self.ks.iter().zip(&self.r_values) {
            writeln!(sink, "{k},{r}")?;
        }
        writeln!(sink, "auc_rnx,{}", self.auc_rnx)?;
        Ok(())
    }
}

/// Quality of `y_ld` as an embedding of `x_hd`, using Euclidean neighbors in
/// both spaces.
pub fn quality_curve(x_hd: &Array2<f64>, y_ld: &Array2<f64>, k_max: usize) -> Result<QualityCurve> {
    let n = x_hd.nrows();
    if y_ld.nrows() != n {
        return Err(Error::arg(format!("{n} HD points but {} LD points", y_ld.nrows())));
    }
    if k_max == 0 || n < k_max + 2 {
        return Err(Error::arg(format!("N = {n} is too small for k_max = {k_max}")));
    }
    let hd = knn_table(x_hd, k_max)?;
    let ld = knn_table(y_ld, k_max)?;
    QualityCurve::from_tables(&hd, &ld, k_max)
}

/// First iteration whose score reaches `fraction` of the final score.
pub fn iterations_to_fraction(series: &[(usize, f64)], fraction: f64) -> Option<usize> {
    let &(_, last) = series.last()?;
    series
        .iter()
        .find(|&&(_, v)| v >= fraction * last)
        .map(|&(it, _)| it)
}

/// Polar angle of every row around the centroid.
pub fn angles_about_centroid(coords: &Array2<f64>) -> Vec<f64> {
    let n = coords.nrows() as f64;
    let cx = coords.column(0).sum() / n;
    let cy = coords.column(1).sum() / n;
    coords
        .outer_iter()
        .map(|r| (r[1] - cy).atan2(r[0] - cx))
        .collect()
}

fn ranks(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut r = vec![0; v.len()];
    for (rank, &i) in order.iter().enumerate() {
        r[i] = rank;
    }
    r
}

/// Spearman correlation between two angular orderings, maximized over the
/// cyclic shift and direction of the second one. One means the second
/// layout visits the points in exactly the same circular order.
pub fn circular_rank_correlation(reference: &[f64], other: &[f64]) -> f64 {
    let n = reference.len();
    assert_eq!(n, other.len(), "angle lists must have equal length");
    if n < 2 {
        return 1.0;
    }
    let ra = ranks(reference);
    let rb = ranks(other);
    let nf = n as f64;
    let mean = (nf - 1.0) / 2.0;
    let var = (nf * nf - 1.0) / 12.0;
    let mut best = f64::NEG_INFINITY;
    for reversed in [false, true] {
        for shift in 0..n {
            let cov: f64 = ra
                .iter()
                .zip(&rb)
                .map(|(&a, &b)| {
                    let b = if reversed { n - 1 - b } else { b };
                    let b = (b + shift) % n;
                    (a as f64 - mean) * (b as f64 - mean)
                })
                .sum::<f64>()
                / nf;
            best = best.max(cov / var);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::gaussian_matrix;
    use ndarray::array;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn naive_knn(m: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
        let n = m.nrows();
        (0..n)
            .map(|i| {
                let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let d = |j: usize| -> f64 {
                    m.row(i).iter().zip(m.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum()
                };
                // insertion sort, strict comparison keeps index order on ties
                for a in 1..others.len() {
                    let mut b = a;
                    while b > 0 && d(others[b]) < d(others[b - 1]) {
                        others.swap(b, b - 1);
                        b -= 1;
                    }
                }
                others.truncate(k);
                others
            })
            .collect()
    }

    fn table(rows: Vec<Vec<usize>>) -> NeighborTable {
        let (n, k) = (rows.len(), rows[0].len());
        NeighborTable::from_indices(Array2::from_shape_vec((n, k), rows.concat()).unwrap()).unwrap()
    }

    #[test]
    fn collinear_ties_go_to_lower_index() {
        let m = array![[0.0], [1.0], [2.0], [3.0]];
        let t = knn_table(&m, 2).unwrap();
        assert_eq!(t.indices(), &array![[1, 2], [0, 2], [1, 3], [2, 1]]);
    }

    #[test]
    fn matches_naive_sort() {
        let m = gaussian_matrix(100, 4, 11);
        let t = knn_table(&m, 10).unwrap();
        assert_eq!(t, table(naive_knn(&m, 10)));
        let grid = Array2::from_shape_fn((36, 2), |(i, d)| if d == 0 { (i % 6) as f64 } else { (i / 6) as f64 });
        assert_eq!(knn_table(&grid, 8).unwrap(), table(naive_knn(&grid, 8)));
    }

    #[test]
    fn similarity_table_reverses_order() {
        let m = gaussian_matrix(30, 3, 2);
        let s = Array2::from_shape_fn((30, 30), |(i, j)| -squared_euclidean(m.row(i), m.row(j)));
        assert_eq!(knn_from_similarity(&s, 5).unwrap(), knn_table(&m, 5).unwrap());
    }

    #[test]
    fn rejects_bad_k() {
        let m = gaussian_matrix(5, 2, 0);
        assert!(knn_table(&m, 0).is_err());
        assert!(knn_table(&m, 5).is_err());
        assert!(knn_table(&m, 4).is_ok());
        assert!(NeighborTable::from_indices(array![[0], [0]]).is_err());
        assert!(NeighborTable::from_indices(array![[1, 1], [0, 2], [0, 1]]).is_err());
    }

    #[test]
    fn agreement_by_hand() {
        let hd = table(vec![vec![1, 2], vec![0, 2], vec![0, 1], vec![0, 1]]);
        let ld = table(vec![vec![1, 3], vec![2, 3], vec![3, 1], vec![0, 1]]);
        // shared: {1}, {2}, {1}, {0,1} -> 5 / 8
        assert_eq!(neighborhood_agreement(&hd, &ld, 2).unwrap(), 0.625);
        let a = table(vec![vec![1], vec![0], vec![3], vec![2]]);
        let b = table(vec![vec![2], vec![3], vec![0], vec![1]]);
        assert_eq!(neighborhood_agreement(&a, &a, 1).unwrap(), 1.0);
        assert_eq!(neighborhood_agreement(&a, &b, 1).unwrap(), 0.0);
    }

    #[test]
    fn half_agreement() {
        let hd = table(vec![vec![1, 2], vec![0, 2], vec![0, 1], vec![0, 1]]);
        let ld = table(vec![vec![1, 3], vec![0, 3], vec![0, 3], vec![0, 2]]);
        assert_eq!(neighborhood_agreement(&hd, &ld, 2).unwrap(), 0.5);
    }

    #[test]
    fn r_values() {
        assert!((r_of_k(0.5, 100, 10).unwrap() - 39.5 / 89.0).abs() < 1e-15);
        assert!((r_of_k(0.5, 100, 10).unwrap() - 0.44382).abs() < 1e-5);
        assert_eq!(r_of_k(1.0, 50, 7).unwrap(), 1.0);
        assert_eq!(r_of_k(7.0 / 49.0, 50, 7).unwrap(), 0.0);
        assert!(r_of_k(0.5, 10, 0).is_err());
        assert!(r_of_k(0.5, 10, 9).is_err());
        assert!(r_of_k(0.5, 10, 8).is_ok());
    }

    #[test]
    fn auc_weights() {
        assert!((auc_rnx(&[(1, 1.0), (2, 0.0)]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(auc_rnx(&[(3, 0.4)]).unwrap(), 0.4);
        assert!(auc_rnx(&[]).is_err());
        assert!(auc_rnx(&[(1, 0.2), (1, 0.3)]).is_err());
        assert!(auc_rnx(&[(0, 0.2)]).is_err());
    }

    #[test]
    fn identical_geometry_scores_one() {
        let x = gaussian_matrix(120, 2, 5);
        let c = quality_curve(&x, &x, 20).unwrap();
        assert!(c.r_values.iter().all(|&r| r == 1.0));
        assert_eq!(c.auc_rnx, 1.0);
    }

    #[test]
    fn unrelated_layout_is_near_zero() {
        let x = gaussian_matrix(500, 10, 6);
        let y = gaussian_matrix(500, 2, 7);
        let c = quality_curve(&x, &y, 30).unwrap();
        let mean = c.r_values.iter().sum::<f64>() / c.r_values.len() as f64;
        assert!(mean.abs() < 0.05, "mean R {mean}");
    }

    #[test]
    fn end_to_end_matches_naive() {
        let x = gaussian_matrix(20, 6, 8);
        let y = gaussian_matrix(20, 2, 9);
        let k_max = 18;
        let c = quality_curve(&x, &y, k_max).unwrap();
        let (hd, ld) = (naive_knn(&x, k_max), naive_knn(&y, k_max));
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 1..=k_max {
            let shared: usize = (0..20)
                .map(|i| {
                    let a: HashSet<_> = hd[i][..k].iter().collect();
                    ld[i][..k].iter().filter(|j| a.contains(j)).count()
                })
                .sum();
            let q = shared as f64 / (20 * k) as f64;
            let r = (19.0 * q - k as f64) / (19.0 - k as f64);
            assert!((c.r_values[k - 1] - r).abs() < 1e-12, "k = {k}");
            num += r / k as f64;
            den += 1.0 / k as f64;
        }
        assert!((c.auc_rnx - num / den).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let c = QualityCurve { ks: vec![1, 2], r_values: vec![1.0, 0.0], auc_rnx: 0.5 };
        let mut out = Vec::new();
        c.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "k,R\n1,1\n2,0\nauc_rnx,0.5\n");
    }

    #[test]
    fn fraction_of_final() {
        let s = [(100, 0.1), (200, 0.5), (300, 0.58), (400, 0.6)];
        assert_eq!(iterations_to_fraction(&s, 0.95), Some(300));
        assert_eq!(iterations_to_fraction(&s, 0.0), Some(100));
        assert_eq!(iterations_to_fraction(&[], 0.95), None);
    }

    #[test]
    fn circular_order() {
        let n = 40;
        let base: Vec<f64> = (0..n).map(|i| i as f64 * std::f64::consts::TAU / n as f64 - 3.0).collect();
        let wrap = |a: f64| (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        let rotated: Vec<f64> = base.iter().map(|a| wrap(a + 2.0)).collect();
        let mirrored: Vec<f64> = base.iter().map(|a| wrap(-a + 0.7)).collect();
        assert!((circular_rank_correlation(&base, &rotated) - 1.0).abs() < 1e-12);
        assert!((circular_rank_correlation(&base, &mirrored) - 1.0).abs() < 1e-12);
        let mut scrambled = base.clone();
        scrambled.swap(0, 20);
        scrambled.swap(5, 33);
        assert!(circular_rank_correlation(&base, &scrambled) < 1.0);

        let pts = Array2::from_shape_fn((n, 2), |(i, d)| {
            let a = base[i];
            5.0 + if d == 0 { a.cos() } else { a.sin() }
        });
        let angles = angles_about_centroid(&pts);
        assert!(angles.iter().zip(&base).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn agreement_is_symmetric(seed in 0u64..1000) {
            let x = knn_table(&gaussian_matrix(40, 3, seed), 10).unwrap();
            let y = knn_table(&gaussian_matrix(40, 2, seed + 1), 10).unwrap();
            let a = agreement_curve(&x, &y, 10).unwrap();
            prop_assert_eq!(&a, &agreement_curve(&y, &x, 10).unwrap());
            for k in 1..=10 {
                prop_assert_eq!(a[k - 1], neighborhood_agreement(&x, &y, k).unwrap());
            }
        }

        #[test]
        fn invariant_under_similarity_transforms(seed in 0u64..1000, angle in 0.0f64..6.28, scale in 0.5f64..4.0) {
            let x = gaussian_matrix(50, 4, seed);
            let y = gaussian_matrix(50, 2, seed + 7);
            let (c, s) = (angle.cos(), angle.sin());
            let moved = y.dot(&array![[c, -s], [s, c]]) * scale + &array![[3.0, -1.0]];
            let a = quality_curve(&x, &y, 12).unwrap();
            let b = quality_curve(&x, &moved, 12).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn auc_lies_between_extremes(seed in 0u64..1000) {
            let c = quality_curve(&gaussian_matrix(60, 5, seed), &gaussian_matrix(60, 2, seed + 3), 20).unwrap();
            let lo = c.r_values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = c.r_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo - 1e-12 <= c.auc_rnx && c.auc_rnx <= hi + 1e-12);
        }
    }
}
