//! Structured covariance of the interaction force field.
//!
//! The force field is linear in the kernel, so its covariance under the GP
//! prior is a sum of kernel evaluations at pairwise distances weighted by
//! outer products of pairwise difference vectors. One difference tensor is
//! shared by the ff-covariance, its hyperparameter derivative, and the
//! cross-covariance.

use crate::dynamics::{InteractionVariable, ObservationSet};
use crate::error::{Error, Result};
use crate::kernels::KernelHyperparams;
use crate::scalar::{real, Scalar};
use nalgebra::{DMatrix, DVector};

/// Hard cap on `dNML` for dense assembly.
pub const MAX_DNML: usize = 8192;

/// Precomputed pairwise differences of one observation set.
///
/// For every snapshot and ordered pair `(i, k)` with `k != i` it stores the
/// position distance `r_ik` and the interaction vector `u_ik` (position or
/// velocity difference, per the system's interaction variable).
#[derive(Debug, Clone)]
pub struct DiffTensor<T: Scalar> {
    d: usize,
    n: usize,
    snapshots: usize,
    dist: Vec<T>,
    vecs: Vec<T>,
}

impl<T: Scalar> DiffTensor<T> {
    pub fn new(obs: &ObservationSet<T>) -> Result<Self> {
        obs.validate()?;
        let d = obs.d;
        let n = obs.n;
        let snapshots = obs.m_count * obs.l_count;
        let pairs = n - 1;
        let mut dist = Vec::with_capacity(snapshots * n * pairs);
        let mut vecs = Vec::with_capacity(snapshots * n * pairs * d);
        for state in &obs.states {
            let x = &state.x;
            let interaction_source: &[T] = match obs.interaction {
                InteractionVariable::PositionDifference => x,
                InteractionVariable::VelocityDifference => {
                    state.v.as_deref().ok_or_else(|| {
                        Error::InvalidInput(
                            "velocity-difference observations need velocities".into(),
                        )
                    })?
                }
            };
            for i in 0..n {
                for k in 0..n {
                    if k == i {
                        continue;
                    }
                    let mut r2 = T::zero();
                    for c in 0..d {
                        let diff = x[k * d + c] - x[i * d + c];
                        r2 += diff * diff;
                    }
                    dist.push(r2.sqrt());
                    for c in 0..d {
                        vecs.push(interaction_source[k * d + c] - interaction_source[i * d + c]);
                    }
                }
            }
        }
        Ok(Self { d, n, snapshots, dist, vecs })
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshots
    }

    /// Number of agent blocks, `N * M * L`.
    pub fn block_rows(&self) -> usize {
        self.snapshots * self.n
    }

    /// Total scalar dimension `d N M L`.
    pub fn dim(&self) -> usize {
        self.block_rows() * self.d
    }

    /// Distances from agent `i` in `snapshot` to its `n - 1` partners.
    fn dists(&self, snapshot: usize, i: usize) -> &[T] {
        let pairs = self.n - 1;
        let start = (snapshot * self.n + i) * pairs;
        &self.dist[start..start + pairs]
    }

    /// Interaction vectors from agent `i` in `snapshot`, `(n - 1) * d` flat.
    fn diff_vecs(&self, snapshot: usize, i: usize) -> &[T] {
        let pairs = self.n - 1;
        let start = (snapshot * self.n + i) * pairs * self.d;
        &self.vecs[start..start + pairs * self.d]
    }

    /// All stored distances of one snapshot, `(i, k)`-ordered with `k != i`.
    pub fn snapshot_dists(&self, snapshot: usize) -> &[T] {
        let pairs = self.n - 1;
        let start = snapshot * self.n * pairs;
        &self.dist[start..start + self.n * pairs]
    }

    pub fn snapshot_vecs(&self, snapshot: usize) -> &[T] {
        let pairs = self.n - 1;
        let start = snapshot * self.n * pairs * self.d;
        &self.vecs[start..start + self.n * pairs * self.d]
    }

    fn check_cap(&self) -> Result<()> {
        let dim = self.dim();
        if dim > MAX_DNML {
            return Err(Error::Resource { size: dim, cap: MAX_DNML });
        }
        Ok(())
    }

    /// Full `dNML x dNML` covariance of the force field:
    /// block `((a,i),(b,j))` is
    /// `(1/N^2) sum_{k != i, k' != j} K(r^a_ik, r^b_jk') u^a_ik (u^b_jk')^T`.
    pub fn ff_cov(&self, h: &KernelHyperparams<T>) -> Result<DMatrix<T>> {
        self.check_cap()?;
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        self.fill_ff(h, &mut out, None);
        Ok(out)
    }

    /// ff covariance together with its derivative in `log omega`
    /// (the `log s` derivative is `2 K` and needs no extra assembly).
    pub fn ff_cov_with_omega_grad(
        &self,
        h: &KernelHyperparams<T>,
    ) -> Result<(DMatrix<T>, DMatrix<T>)> {
        self.check_cap()?;
        let mut cov = DMatrix::zeros(self.dim(), self.dim());
        let mut grad = DMatrix::zeros(self.dim(), self.dim());
        self.fill_ff(h, &mut cov, Some(&mut grad));
        Ok((cov, grad))
    }

    fn fill_ff(&self, h: &KernelHyperparams<T>, cov: &mut DMatrix<T>, mut grad: Option<&mut DMatrix<T>>) {
        let d = self.d;
        let pairs = self.n - 1;
        let inv_n2 = T::one() / real::<T>((self.n * self.n) as f64);
        let blocks = self.block_rows();
        let mut kbuf = vec![T::zero(); pairs * pairs];
        let mut gbuf = vec![T::zero(); pairs * pairs];
        for row in 0..blocks {
            let (a, i) = (row / self.n, row % self.n);
            let dist_a = self.dists(a, i);
            let vec_a = self.diff_vecs(a, i);
            for col in row..blocks {
                let (b, j) = (col / self.n, col % self.n);
                let dist_b = self.dists(b, j);
                let vec_b = self.diff_vecs(b, j);
                if grad.is_some() {
                    for (kk, &ra) in dist_a.iter().enumerate() {
                        for (kk2, &rb) in dist_b.iter().enumerate() {
                            let (k, _, dw) = h.eval_with_grad(ra, rb);
                            kbuf[kk * pairs + kk2] = k;
                            gbuf[kk * pairs + kk2] = dw;
                        }
                    }
                } else {
                    for (kk, &ra) in dist_a.iter().enumerate() {
                        for (kk2, &rb) in dist_b.iter().enumerate() {
                            kbuf[kk * pairs + kk2] = h.eval(ra, rb);
                        }
                    }
                }
                for c1 in 0..d {
                    for c2 in 0..d {
                        let mut acc_k = T::zero();
                        let mut acc_g = T::zero();
                        for kk in 0..pairs {
                            let ua = vec_a[kk * d + c1];
                            for kk2 in 0..pairs {
                                let w = ua * vec_b[kk2 * d + c2];
                                acc_k += kbuf[kk * pairs + kk2] * w;
                                if grad.is_some() {
                                    acc_g += gbuf[kk * pairs + kk2] * w;
                                }
                            }
                        }
                        let (r_idx, c_idx) = (row * d + c1, col * d + c2);
                        cov[(r_idx, c_idx)] = acc_k * inv_n2;
                        cov[(c_idx, r_idx)] = acc_k * inv_n2;
                        if let Some(g) = grad.as_deref_mut() {
                            g[(r_idx, c_idx)] = acc_g * inv_n2;
                            g[(c_idx, r_idx)] = acc_g * inv_n2;
                        }
                    }
                }
            }
        }
    }

    /// Cross covariance between the stacked force field and `phi(r_star)`:
    /// block `(a, i)` is `(1/N) sum_{k != i} K(r^a_ik, r_star) u^a_ik`.
    pub fn cross_cov(&self, h: &KernelHyperparams<T>, r_star: T) -> Result<DVector<T>> {
        if !(r_star >= T::zero()) || !r_star.is_finite() {
            return Err(Error::InvalidInput(format!(
                "query distance must be finite and nonnegative, got {r_star}"
            )));
        }
        let d = self.d;
        let pairs = self.n - 1;
        let inv_n = T::one() / real::<T>(self.n as f64);
        let mut out = DVector::zeros(self.dim());
        for row in 0..self.block_rows() {
            let (a, i) = (row / self.n, row % self.n);
            let dist_a = self.dists(a, i);
            let vec_a = self.diff_vecs(a, i);
            for kk in 0..pairs {
                let k = h.eval(dist_a[kk], r_star);
                for c in 0..d {
                    out[row * d + c] += k * vec_a[kk * d + c];
                }
            }
        }
        out *= inv_n;
        Ok(out)
    }
}

/// Assemble the force-field covariance of an observation set.
pub fn assemble_ff_cov<T: Scalar>(
    obs: &ObservationSet<T>,
    h: &KernelHyperparams<T>,
) -> Result<DMatrix<T>> {
    DiffTensor::new(obs)?.ff_cov(h)
}

/// Assemble the cross covariance against a query distance.
pub fn assemble_cross_cov<T: Scalar>(
    obs: &ObservationSet<T>,
    h: &KernelHyperparams<T>,
    r_star: T,
) -> Result<DVector<T>> {
    DiffTensor::new(obs)?.cross_cov(h, r_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::testutil::{brute_force_cross_cov, brute_force_ff_cov, random_instance};
    use crate::kernels::MaternNu;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn degenerate_h() -> KernelHyperparams<f64> {
        KernelHyperparams::from_logs(MaternNu::ThreeHalves, f64::NEG_INFINITY, 0.0)
    }

    #[test]
    fn two_agent_single_snapshot_by_hand() {
        let obs = crate::gp::testutil::two_agent_snapshot(&[0.0, 1.0], &[0.0, 0.0]);
        let h = KernelHyperparams::new(MaternNu::ThreeHalves, 1.0, 1.0).unwrap();
        let cov = assemble_ff_cov(&obs, &h).unwrap();
        // K(1,1) = 1, so blocks are (1/4) * (+-1)(+-1)
        assert_relative_eq!(cov[(0, 0)], 0.25, epsilon = 1e-15);
        assert_relative_eq!(cov[(0, 1)], -0.25, epsilon = 1e-15);
        assert_relative_eq!(cov[(1, 0)], -0.25, epsilon = 1e-15);
        assert_relative_eq!(cov[(1, 1)], 0.25, epsilon = 1e-15);

        let cross = assemble_cross_cov(&obs, &h, 1.0).unwrap();
        assert_relative_eq!(cross[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(cross[1], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_prior_gives_zero_covariances() {
        let obs = crate::gp::testutil::two_agent_snapshot(&[0.0, 1.0], &[0.2, -0.1]);
        let h = degenerate_h();
        let cov = assemble_ff_cov(&obs, &h).unwrap();
        assert!(cov.iter().all(|x| *x == 0.0));
        let cross = assemble_cross_cov(&obs, &h, 0.7).unwrap();
        assert!(cross.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for trial in 0..40 {
            let (obs, h) = random_instance(&mut rng, trial % 2 == 0);
            let fast = assemble_ff_cov(&obs, &h).unwrap();
            let slow = brute_force_ff_cov(&obs, &h);
            let diff = (&fast - &slow).abs().max();
            assert!(diff <= 1e-12, "trial {trial}: ff mismatch {diff}");

            let r_star = 0.3 + 0.01 * trial as f64;
            let fast_cross = assemble_cross_cov(&obs, &h, r_star).unwrap();
            let slow_cross = brute_force_cross_cov(&obs, &h, r_star);
            let cdiff = (&fast_cross - &slow_cross).abs().max();
            assert!(cdiff <= 1e-12, "trial {trial}: cross mismatch {cdiff}");
        }
    }

    #[test]
    fn ff_cov_is_psd_up_to_tolerance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let (obs, h) = random_instance(&mut rng, false);
            let cov = assemble_ff_cov(&obs, &h).unwrap();
            let dim = cov.nrows();
            let trace: f64 = cov.diagonal().iter().sum();
            let min_eig = cov
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(
                min_eig >= -1e-9 * (trace / dim as f64).max(1e-30),
                "trial {trial}: min eig {min_eig}, trace {trace}"
            );
        }
    }

    #[test]
    fn size_cap_is_enforced() {
        use crate::dynamics::{InteractionVariable, ObservationSet, Order, State};
        let l_count = MAX_DNML / 2 + 1;
        let states: Vec<State<f64>> = (0..l_count)
            .map(|l| State::first_order(vec![0.0, 1.0 + l as f64 * 1e-9], l as f64))
            .collect();
        let obs = ObservationSet {
            d: 1,
            n: 2,
            order: Order::First,
            interaction: InteractionVariable::PositionDifference,
            m_count: 1,
            l_count,
            times: (0..l_count).map(|l| l as f64).collect(),
            states,
            targets: vec![vec![0.0, 0.0]; l_count],
            sigma_true: None,
            seed: None,
        };
        let h = KernelHyperparams::new(MaternNu::ThreeHalves, 1.0, 1.0).unwrap();
        match assemble_ff_cov(&obs, &h) {
            Err(Error::Resource { size, cap }) => {
                assert!(size > cap);
            }
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn omega_grad_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let (obs, h) = random_instance(&mut rng, false);
        let tensor = DiffTensor::new(&obs).unwrap();
        let (_, grad) = tensor.ff_cov_with_omega_grad(&h).unwrap();
        let step = 1e-6;
        let up = KernelHyperparams::from_logs(h.nu(), h.log_s(), h.log_omega() + step);
        let dn = KernelHyperparams::from_logs(h.nu(), h.log_s(), h.log_omega() - step);
        let fd = (tensor.ff_cov(&up).unwrap() - tensor.ff_cov(&dn).unwrap()) / (2.0 * step);
        let denom = grad.abs().max().max(1e-6);
        assert!((&grad - &fd).abs().max() / denom <= 1e-6);
    }
}
