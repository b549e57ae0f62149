//! Exact `O(N^2)` t-SNE optimizer: Student-t output affinities, KL(P || Q)
//! and its gradient, and momentum gradient descent with checkpoints.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{Embedding, Provenance};
use crate::kernels::JointDistribution;
use crate::pairwise;

/// Floor applied to `q_ij` inside the KL divergence and its gradient.
pub const Q_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub learning_rate: f64,
    pub momentum_early: f64,
    pub momentum_late: f64,
    /// First iteration (1-based) that uses `momentum_late`.
    pub momentum_switch_iter: usize,
    pub max_iters: usize,
    pub checkpoint_every: usize,
    pub early_exaggeration_factor: f64,
    /// Iterations `1..=early_exaggeration_iters` see `factor * P`.
    pub early_exaggeration_iters: usize,
    /// Per-coordinate adaptive gains (+0.2 on sign change, x0.8 otherwise).
    pub adaptive_gains: bool,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            learning_rate: 200.0,
            momentum_early: 0.5,
            momentum_late: 0.8,
            momentum_switch_iter: 250,
            max_iters: 2000,
            checkpoint_every: 100,
            early_exaggeration_factor: 1.0,
            early_exaggeration_iters: 250,
            adaptive_gains: false,
        }
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        for (name, m) in [("early", self.momentum_early), ("late", self.momentum_late)] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::arg(format!("{name} momentum must lie in [0, 1), got {m}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::arg("max_iters must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::arg("checkpoint_every must be at least 1"));
        }
        if !(self.early_exaggeration_factor >= 1.0 && self.early_exaggeration_factor.is_finite()) {
            return Err(Error::arg(format!(
                "early exaggeration factor must be >= 1, got {}",
                self.early_exaggeration_factor
            )));
        }
        Ok(())
    }

    /// Iterations at which checkpoints are recorded.
    pub fn checkpoint_iterations(&self) -> Vec<usize> {
        let mut its: Vec<usize> = (1..=self.max_iters / self.checkpoint_every)
            .map(|c| c * self.checkpoint_every)
            .collect();
        if its.last() != Some(&self.max_iters) {
            its.push(self.max_iters);
        }
        its
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub embedding: Embedding,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub checkpoints: Vec<Checkpoint>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }
}

type Points = Vec<[f64; 2]>;

fn as_points(y: &Array2<f64>) -> Points {
    y.outer_iter().map(|r| [r[0], r[1]]).collect()
}

#[inline]
fn student_weight(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    1.0 / (1.0 + dx * dx + dy * dy)
}

/// `sum_{i != j} (1 + |y_i - y_j|^2)^-1`, summed row by row in index order.
fn weight_total(y: &[[f64; 2]]) -> f64 {
    let rows: Vec<f64> = (0..y.len())
        .into_par_iter()
        .map(|i| {
            let yi = y[i];
            let mut s = 0.0;
            for (j, &yj) in y.iter().enumerate() {
                if j != i {
                    s += student_weight(yi, yj);
                }
            }
            s
        })
        .collect();
    rows.iter().sum()
}

fn check_shapes(p: &JointDistribution, n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::arg(format!("P is {}x{} but the embedding has {n} rows", p.len(), p.len())));
    }
    Ok(())
}

/// Student-t (one degree of freedom) joint distribution of the layout.
pub fn low_dim_affinities(y: &Embedding) -> Result<JointDistribution> {
    let n = y.len();
    if n < 2 {
        return Err(Error::arg("need at least two points"));
    }
    let pts = as_points(&y.coords);
    let total = weight_total(&pts);
    let values = pairwise::symmetric(n, 0.0, |i, j| student_weight(pts[i], pts[j]) / total);
    Ok(JointDistribution::new_unchecked(values))
}

/// `sum_{i != j} p_ij ln(p_ij / max(q_ij, 1e-12))`, zero-probability terms
/// skipped.
pub fn kl_divergence(p: &JointDistribution, q: &JointDistribution) -> Result<f64> {
    if p.values().dim() != q.values().dim() {
        return Err(Error::arg(format!(
            "shape mismatch: P is {:?}, Q is {:?}",
            p.values().dim(),
            q.values().dim()
        )));
    }
    let (pv, qv) = (p.values(), q.values());
    let rows: Vec<f64> = (0..pv.nrows())
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for (j, (&pij, &qij)) in pv.row(i).iter().zip(qv.row(i).iter()).enumerate() {
                if j != i && pij > 0.0 {
                    s += pij * (pij / qij.max(Q_FLOOR)).ln();
                }
            }
            s
        })
        .collect();
    Ok(rows.iter().sum())
}

fn kl_of_layout(p: &Array2<f64>, y: &[[f64; 2]]) -> f64 {
    let total = weight_total(y);
    let rows: Vec<f64> = (0..y.len())
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for (j, &pij) in p.row(i).iter().enumerate() {
                if j != i && pij > 0.0 {
                    let q = student_weight(y[i], y[j]) / total;
                    s += pij * (pij / q.max(Q_FLOOR)).ln();
                }
            }
            s
        })
        .collect();
    rows.iter().sum()
}

/// Gradient of KL(scale * P || Q) with respect to each coordinate. Returns
/// the Student-t normalizer, which is zero once the layout has blown up.
fn gradient_into(p: &Array2<f64>, scale: f64, y: &[[f64; 2]], out: &mut Array2<f64>) -> f64 {
    let total = weight_total(y);
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut g)| {
            let yi = y[i];
            let (mut gx, mut gy) = (0.0, 0.0);
            for (j, (&pij, &yj)) in p.row(i).iter().zip(y.iter()).enumerate() {
                if j == i {
                    continue;
                }
                let w = student_weight(yi, yj);
                let q = (w / total).max(Q_FLOOR);
                let coef = (scale * pij - q) * w;
                gx += coef * (yi[0] - yj[0]);
                gy += coef * (yi[1] - yj[1]);
            }
            g[0] = 4.0 * gx;
            g[1] = 4.0 * gy;
        });
    total
}

/// `dKL/dy_i = 4 sum_j (p_ij - q_ij)(y_i - y_j)(1 + |y_i - y_j|^2)^-1`
pub fn gradient(p: &JointDistribution, y: &Embedding) -> Result<Array2<f64>> {
    check_shapes(p, y.len())?;
    let mut out = Array2::zeros((y.len(), 2));
    gradient_into(p.values(), 1.0, &as_points(&y.coords), &mut out);
    Ok(out)
}

/// Runs the optimizer, handing every checkpoint to `on_checkpoint` as soon
/// as it is recorded. An error from the callback stops the run.
pub fn run_tsne_with<F>(
    p: &JointDistribution,
    init: &Embedding,
    params: &OptimizerParams,
    mut on_checkpoint: F,
) -> Result<()>
where
    F: FnMut(Checkpoint) -> Result<()>,
{
    params.validate()?;
    let n = init.len();
    check_shapes(p, n)?;
    if n < 2 {
        return Err(Error::arg("need at least two points"));
    }
    let pv = p.values();
    let mut y = as_points(&init.coords);
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = Array2::zeros((n, 2));

    for iter in 1..=params.max_iters {
        let scale = if iter <= params.early_exaggeration_iters {
            params.early_exaggeration_factor
        } else {
            1.0
        };
        let total = gradient_into(pv, scale, &y, &mut grad);
        if !(total.is_normal() && total.is_finite()) {
            return Err(Error::Divergence { iteration: iter });
        }
        let momentum = if iter < params.momentum_switch_iter {
            params.momentum_early
        } else {
            params.momentum_late
        };

        let mut mean = [0.0; 2];
        for i in 0..n {
            for d in 0..2 {
                let g = grad[[i, d]];
                if params.adaptive_gains {
                    let gain = &mut gains[i][d];
                    *gain = if (g > 0.0) != (velocity[i][d] > 0.0) {
                        *gain + 0.2
                    } else {
                        (*gain * 0.8).max(0.01)
                    };
                }
                let v = momentum * velocity[i][d] - params.learning_rate * gains[i][d] * g;
                velocity[i][d] = v;
                y[i][d] += v;
                mean[d] += y[i][d];
            }
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        let mut finite = true;
        for pt in y.iter_mut() {
            pt[0] -= mean[0];
            pt[1] -= mean[1];
            finite &= pt[0].is_finite() && pt[1].is_finite();
        }
        if !finite {
            return Err(Error::Divergence { iteration: iter });
        }

        if iter % params.checkpoint_every == 0 || iter == params.max_iters {
            let kl = kl_of_layout(pv, &y);
            if !kl.is_finite() {
                return Err(Error::Divergence { iteration: iter });
            }
            let coords = Array2::from_shape_fn((n, 2), |(i, d)| y[i][d]);
            on_checkpoint(Checkpoint {
                iteration: iter,
                embedding: Embedding::new(coords, Provenance::Optimizer)?,
                kl,
            })?;
        }
    }
    Ok(())
}

/// Runs the optimizer and collects the whole trajectory.
pub fn run_tsne(p: &JointDistribution, init: &Embedding, params: &OptimizerParams) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    run_tsne_with(p, init, params, |c| {
        traj.checkpoints.push(c);
        Ok(())
    })?;
    Ok(traj)
}
