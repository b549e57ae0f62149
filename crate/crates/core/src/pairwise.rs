//! Dense pairwise computations shared by the kernels and the metrics.

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::FeatureMatrix;

/// Builds a symmetric `n x n` matrix by evaluating `f(i, j)` once for every
/// pair `i < j` and mirroring it. Rows are computed in parallel; every entry
/// depends only on its own pair, so the output is identical for any number
/// of threads.
pub(crate) fn symmetric<F>(n: usize, diagonal: f64, f: F) -> Array2<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let mut out = Array2::from_elem((n, n), diagonal);
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| f(i, j)).collect())
        .collect();
    for (i, row) in upper.into_iter().enumerate() {
        for (offset, v) in row.into_iter().enumerate() {
            let j = i + 1 + offset;
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

pub(crate) fn squared_euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn manhattan(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

pub(crate) fn squared_distance_matrix(x: &FeatureMatrix) -> Array2<f64> {
    symmetric(x.nrows(), 0.0, |i, j| squared_euclidean(x.row(i), x.row(j)))
}

/// Sum of all entries, accumulated row by row in index order.
pub(crate) fn ordered_sum(m: &Array2<f64>) -> f64 {
    let row_sums: Vec<f64> = m
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|r| r.iter().sum::<f64>())
        .collect();
    row_sums.iter().sum()
}
