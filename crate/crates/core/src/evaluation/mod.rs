//! Posterior kernel curves, error metrics, trajectory comparison, and the
//! flocking score.

mod measure;
mod predict;

pub use measure::{empirical_rho, EmpiricalMeasure};
pub use predict::{learned_system, predict_and_score, PredictionReport};

use crate::dynamics::{ObservationSet, State};
use crate::error::{Error, Result};
use crate::interp::InterpTable;
use crate::scalar::{real, Scalar};
use crate::training::TrainedModel;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Posterior mean curve of the interaction kernel with a pointwise
/// two-standard-deviation band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct KernelEstimate<T: Scalar> {
    pub grid: Vec<T>,
    pub mean: Vec<T>,
    pub variance: Vec<T>,
    /// Number of variance values clipped up to zero.
    pub clipped: usize,
}

impl<T: Scalar> KernelEstimate<T> {
    pub fn sd(&self, idx: usize) -> T {
        self.variance[idx].sqrt()
    }

    pub fn band(&self, idx: usize) -> (T, T) {
        let two = real::<T>(2.0);
        let sd = self.sd(idx);
        (self.mean[idx] - two * sd, self.mean[idx] + two * sd)
    }

    /// Monotone-cubic interpolant of the mean curve.
    pub fn mean_interpolant(&self) -> Result<InterpTable<T>> {
        InterpTable::new(self.grid.clone(), self.mean.clone())
    }

    /// Plot-ready CSV, header `r,mean,sd,lo,hi`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("r,mean,sd,lo,hi\n");
        for idx in 0..self.grid.len() {
            let (lo, hi) = self.band(idx);
            out.push_str(&format!(
                "{},{},{},{lo},{hi}\n",
                self.grid[idx],
                self.mean[idx],
                self.sd(idx)
            ));
        }
        out
    }
}

/// Query the posterior mean and variance over a distance grid. Negative
/// variances (factorization round-off) are clipped to zero and counted.
pub fn estimate_kernel_curve<T: Scalar + Serialize + serde::de::DeserializeOwned>(
    trained: &mut TrainedModel<T>,
    obs: &ObservationSet<T>,
    grid: &[T],
) -> Result<KernelEstimate<T>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty evaluation grid".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) || !(grid[0] >= T::zero()) {
        return Err(Error::InvalidInput(
            "evaluation grid must be nonnegative and strictly increasing".into(),
        ));
    }
    let model = trained.attach(obs)?;
    let cache = trained.cache().expect("attach fills the cache");
    let mut mean = Vec::with_capacity(grid.len());
    let mut variance = Vec::with_capacity(grid.len());
    let mut clipped = 0usize;
    for &r in grid {
        let (m, v) = model.posterior_phi(cache, r)?;
        mean.push(m);
        if v < T::zero() {
            clipped += 1;
            variance.push(T::zero());
        } else {
            variance.push(v);
        }
    }
    Ok(KernelEstimate { grid: grid.to_vec(), mean, variance, clipped })
}

/// Relative errors of an estimated kernel against the truth, on the region
/// the data actually visits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct ErrorMetrics<T: Scalar> {
    pub rel_linf: T,
    pub rel_l2_rho_tilde: T,
}

/// Relative sup-norm and `rho_tilde`-weighted L2 errors over the supported
/// histogram bins.
pub fn error_metrics<T: Scalar, F: Fn(T) -> T>(
    estimate: &KernelEstimate<T>,
    true_phi: F,
    rho: &EmpiricalMeasure<T>,
) -> Result<ErrorMetrics<T>> {
    let supported: Vec<usize> =
        (0..rho.bins()).filter(|&b| rho.rho[b] > T::zero()).collect();
    if supported.is_empty() {
        return Err(Error::InvalidInput("measure has no supported bins".into()));
    }
    let first_center = rho.center(supported[0]);
    let last_center = rho.center(supported[supported.len() - 1]);
    if estimate.grid[0] > first_center || estimate.grid[estimate.grid.len() - 1] < last_center {
        return Err(Error::InvalidInput(format!(
            "estimate grid [{}, {}] does not cover the supported region [{first_center}, {last_center}]",
            estimate.grid[0],
            estimate.grid[estimate.grid.len() - 1]
        )));
    }
    let interp = estimate.mean_interpolant()?;

    let mut sup_err = T::zero();
    let mut sup_true = T::zero();
    let mut l2_err_sq = T::zero();
    let mut l2_true_sq = T::zero();
    for &bin in &supported {
        let r = rho.center(bin);
        let truth = true_phi(r);
        let diff = interp.eval(r) - truth;
        sup_err = sup_err.max(diff.abs());
        sup_true = sup_true.max(truth.abs());
        l2_err_sq += diff * diff * rho.rho_tilde[bin];
        l2_true_sq += truth * truth * rho.rho_tilde[bin];
    }
    if !(sup_true > T::zero()) || !(l2_true_sq > T::zero()) {
        return Err(Error::UndefinedRelativeError);
    }
    Ok(ErrorMetrics {
        rel_linf: sup_err / sup_true,
        rel_l2_rho_tilde: (l2_err_sq / l2_true_sq).sqrt(),
    })
}

/// Max-in-time Euclidean distance between two state sequences over the
/// grid points falling inside `interval`.
pub fn trajectory_error<T: Scalar>(
    truth: &[State<T>],
    pred: &[State<T>],
    interval: (T, T),
) -> Result<T> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidInput("state sequences have different lengths".into()));
    }
    let mut worst = T::zero();
    let mut hits = 0usize;
    for (a, b) in truth.iter().zip(pred) {
        if a.t != b.t {
            return Err(Error::InvalidInput(format!(
                "time grids differ: {} vs {}",
                a.t, b.t
            )));
        }
        if a.t >= interval.0 && a.t <= interval.1 {
            hits += 1;
            worst = worst.max(a.distance(b));
        }
    }
    if hits == 0 {
        return Err(Error::InvalidInput("no grid points inside the interval".into()));
    }
    Ok(worst)
}

/// Dominant velocity direction and alignment score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct FlockingScore<T: Scalar> {
    pub direction: Vec<T>,
    pub score: T,
    /// Set when the top eigenvalue of the direction Gram matrix is tied and
    /// the maximizer is not unique; the first agent's direction is used.
    pub degenerate: bool,
}

/// Direction maximizing the mean squared alignment of the unit velocities,
/// sign-fixed to point along the first agent, and the score
/// `E = (1/N) sum_i <v, v_i/|v_i|>`.
pub fn flocking_score<T: Scalar>(d: usize, velocities: &[T]) -> Result<FlockingScore<T>> {
    if d == 0 || velocities.is_empty() || velocities.len() % d != 0 {
        return Err(Error::InvalidInput("velocity vector length must be a multiple of d".into()));
    }
    let n = velocities.len() / d;
    let mut units = Vec::with_capacity(n * d);
    for i in 0..n {
        let vi = &velocities[i * d..(i + 1) * d];
        let norm = vi.iter().map(|c| *c * *c).sum::<T>().sqrt();
        if !(norm > T::zero()) {
            return Err(Error::InvalidInput(format!("agent {i} has zero velocity")));
        }
        for c in vi {
            units.push(*c / norm);
        }
    }
    let inv_n = T::one() / real::<T>(n as f64);
    let gram = DMatrix::from_fn(d, d, |r, c| {
        let mut acc = T::zero();
        for i in 0..n {
            acc += units[i * d + r] * units[i * d + c];
        }
        acc * inv_n
    });
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).expect("finite eigenvalues")
    });
    let top = order[0];
    let degenerate = d > 1
        && (eig.eigenvalues[top] - eig.eigenvalues[order[1]]).abs()
            <= real::<T>(1e-12) * eig.eigenvalues[top].abs().max(T::one());

    let mut direction: Vec<T> = if degenerate {
        units[..d].to_vec()
    } else {
        eig.eigenvectors.column(top).iter().copied().collect()
    };
    let align_first: T = direction.iter().zip(&units[..d]).map(|(a, b)| *a * *b).sum();
    if align_first < T::zero() {
        for c in direction.iter_mut() {
            *c = -*c;
        }
    }
    let mut score = T::zero();
    for i in 0..n {
        let dot: T =
            direction.iter().zip(&units[i * d..(i + 1) * d]).map(|(a, b)| *a * *b).sum();
        score += dot;
    }
    score *= inv_n;
    Ok(FlockingScore { direction, score, degenerate })
}
