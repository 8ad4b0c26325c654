//! Marginal likelihood of the derivative observations under the GP prior,
//! with analytic gradients over the force parameters, kernel
//! hyperparameters, and noise level.

use super::assembly::DiffTensor;
use super::posterior::CovarianceCache;
use crate::dynamics::{NonCollectiveForce, ObservationSet, Order};
use crate::error::{Error, Result};
use crate::kernels::KernelHyperparams;
use crate::scalar::{real, Scalar};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Jitter ladder tried before giving up on a factorization. The structured
/// ff-covariance is often rank-deficient (its rank is bounded by the number
/// of distinct pairwise distances), so with tiny noise levels some ridge is
/// needed.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Factor `mat + jitter I`, escalating the jitter until Cholesky succeeds.
pub fn cholesky_with_jitter<T: Scalar>(
    mat: &DMatrix<T>,
) -> Result<(Cholesky<T, Dyn>, T)> {
    for &jitter in &JITTER_LADDER {
        let mut attempt = mat.clone();
        if jitter > 0.0 {
            for i in 0..attempt.nrows() {
                attempt[(i, i)] += real::<T>(jitter);
            }
        }
        if let Some(chol) = attempt.cholesky() {
            return Ok((chol, real(jitter)));
        }
    }
    let min_eig = mat
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(*b));
    Err(Error::Numeric(format!(
        "covariance not positive definite after max jitter {:e}; smallest eigenvalue approx {min_eig:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Likelihood problem for one observation set and one force family. The
/// pairwise-difference tensor is computed once and reused by every
/// evaluation and by the posterior.
pub struct GpModel<'a, T: Scalar> {
    obs: &'a ObservationSet<T>,
    tensor: DiffTensor<T>,
    force: NonCollectiveForce<T>,
    stacked_targets: DVector<T>,
    data_hash: String,
}

impl<'a, T: Scalar + serde::Serialize + serde::de::DeserializeOwned> GpModel<'a, T> {
    pub fn new(obs: &'a ObservationSet<T>, force: NonCollectiveForce<T>) -> Result<Self> {
        obs.validate()?;
        force.validate(obs.n)?;
        if force.needs_velocity() && obs.order == Order::First {
            return Err(Error::InvalidInput(
                "velocity-dependent force family on first-order observations".into(),
            ));
        }
        let tensor = DiffTensor::new(obs)?;
        let stacked_targets = DVector::from_vec(obs.stacked_targets());
        let data_hash = obs.data_hash();
        Ok(Self { obs, tensor, force, stacked_targets, data_hash })
    }

    pub fn observations(&self) -> &ObservationSet<T> {
        self.obs
    }

    pub fn tensor(&self) -> &DiffTensor<T> {
        &self.tensor
    }

    pub fn force(&self) -> &NonCollectiveForce<T> {
        &self.force
    }

    pub fn data_hash(&self) -> &str {
        &self.data_hash
    }

    pub fn param_count(&self) -> usize {
        self.force.param_count()
    }

    /// Residual `Z - F_alpha(Y)` stacked over all observations.
    pub fn residual(&self, alpha: &[T]) -> Result<DVector<T>> {
        let force = self.force.with_params(alpha)?;
        let mut r = self.stacked_targets.clone();
        let dim = self.obs.d * self.obs.n;
        let mut buf = vec![T::zero(); dim];
        for (slot, state) in self.obs.states.iter().enumerate() {
            force.eval_into(self.obs.d, self.obs.n, &state.x, state.v.as_deref(), &mut buf);
            for (idx, f) in buf.iter().enumerate() {
                r[slot * dim + idx] -= *f;
            }
        }
        Ok(r)
    }

    /// `dF/d alpha_j` stacked over all observations, one vector per
    /// parameter.
    fn force_param_grads(&self, alpha: &[T]) -> Result<Vec<DVector<T>>> {
        let force = self.force.with_params(alpha)?;
        let dim = self.obs.d * self.obs.n;
        let total = self.obs.dnml();
        let mut out = vec![DVector::zeros(total); force.param_count()];
        for (slot, state) in self.obs.states.iter().enumerate() {
            let grads =
                force.grad_params(self.obs.d, self.obs.n, &state.x, state.v.as_deref());
            for (j, g) in grads.iter().enumerate() {
                for (idx, v) in g.iter().enumerate() {
                    out[j][slot * dim + idx] = *v;
                }
            }
        }
        Ok(out)
    }

    /// Negative log marginal likelihood.
    pub fn nll(&self, alpha: &[T], h: &KernelHyperparams<T>, sigma: T) -> Result<T> {
        let cov = self.tensor.ff_cov(h)?;
        let r = self.residual(alpha)?;
        let (chol, _) = factor_with_noise(&cov, sigma)?;
        let gamma = chol.solve(&r);
        Ok(nll_from_parts(&chol, &r, &gamma))
    }

    /// NLL and its gradient over `[alpha.., log s, log omega, log sigma]`.
    pub fn nll_grad(
        &self,
        alpha: &[T],
        h: &KernelHyperparams<T>,
        sigma: T,
    ) -> Result<(T, Vec<T>)> {
        let (cov, cov_dw) = self.tensor.ff_cov_with_omega_grad(h)?;
        let r = self.residual(alpha)?;
        let (chol, _) = factor_with_noise(&cov, sigma)?;
        let gamma = chol.solve(&r);
        let value = nll_from_parts(&chol, &r, &gamma);

        let a_inv = chol.inverse();
        let mut grad = Vec::with_capacity(self.param_count() + 3);
        for fg in self.force_param_grads(alpha)? {
            grad.push(-gamma.dot(&fg));
        }
        // d/d theta of the NLL is (1/2) tr((A^-1 - gamma gamma^T) dK);
        // log-s uses dK = 2 K, so the half cancels
        let half = real::<T>(0.5);
        grad.push(frobenius(&a_inv, &cov) - gamma.dot(&(&cov * &gamma)));
        grad.push(half * (frobenius(&a_inv, &cov_dw) - gamma.dot(&(&cov_dw * &gamma))));
        let sigma2 = sigma * sigma;
        grad.push(sigma2 * (a_inv.diagonal().iter().copied().sum::<T>() - gamma.dot(&gamma)));
        Ok((value, grad))
    }

    /// Factor the covariance at `(alpha, h, sigma)` and keep everything a
    /// posterior query needs.
    pub fn build_cache(
        &self,
        alpha: &[T],
        h: &KernelHyperparams<T>,
        sigma: T,
    ) -> Result<CovarianceCache<T>> {
        let cov = self.tensor.ff_cov(h)?;
        let r = self.residual(alpha)?;
        let (chol, jitter) = factor_with_noise(&cov, sigma)?;
        let alpha_vec = chol.solve(&r);
        Ok(CovarianceCache::new(
            chol.l(),
            alpha_vec,
            jitter,
            *h,
            sigma,
            alpha.to_vec(),
            self.data_hash.clone(),
        ))
    }

    /// Posterior mean and variance of `phi(r_star)` given a cache built by
    /// this model.
    pub fn posterior_phi(&self, cache: &CovarianceCache<T>, r_star: T) -> Result<(T, T)> {
        if cache.data_hash() != self.data_hash {
            return Err(Error::Contract(
                "covariance cache was built from different observations".into(),
            ));
        }
        let cross = self.tensor.cross_cov(cache.hyperparams(), r_star)?;
        cache.posterior_from_cross(&cross, r_star)
    }
}

pub(crate) fn factor_with_noise<T: Scalar>(
    cov: &DMatrix<T>,
    sigma: T,
) -> Result<(Cholesky<T, Dyn>, T)> {
    if sigma < T::zero() || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("noise level must be nonnegative, got {sigma}")));
    }
    let mut a = cov.clone();
    let s2 = sigma * sigma;
    for i in 0..a.nrows() {
        a[(i, i)] += s2;
    }
    cholesky_with_jitter(&a)
}

fn nll_from_parts<T: Scalar>(
    chol: &Cholesky<T, Dyn>,
    r: &DVector<T>,
    gamma: &DVector<T>,
) -> T {
    let half = real::<T>(0.5);
    let log_det =
        real::<T>(2.0) * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<T>();
    let dim = real::<T>(r.len() as f64);
    let two_pi = real::<T>(std::f64::consts::TAU);
    half * r.dot(gamma) + half * log_det + half * dim * two_pi.ln()
}

fn frobenius<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.iter().zip(b.iter()).map(|(x, y)| *x * *y).sum()
}

/// Free-function form of [`GpModel::nll`].
pub fn nll<T: Scalar + serde::Serialize + serde::de::DeserializeOwned>(
    obs: &ObservationSet<T>,
    force: &NonCollectiveForce<T>,
    alpha: &[T],
    h: &KernelHyperparams<T>,
    sigma: T,
) -> Result<T> {
    GpModel::new(obs, force.clone())?.nll(alpha, h, sigma)
}

/// Free-function form of [`GpModel::nll_grad`].
pub fn nll_grad<T: Scalar + serde::Serialize + serde::de::DeserializeOwned>(
    obs: &ObservationSet<T>,
    force: &NonCollectiveForce<T>,
    alpha: &[T],
    h: &KernelHyperparams<T>,
    sigma: T,
) -> Result<(T, Vec<T>)> {
    GpModel::new(obs, force.clone())?.nll_grad(alpha, h, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::testutil::{dense_lu_nll, random_instance, two_agent_snapshot};
    use crate::kernels::MaternNu;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_residual_unit_noise_hits_the_constant() {
        // s = 0 prior, residual 0, sigma = 1: NLL = (dNML/2) log 2 pi
        let obs = two_agent_snapshot(&[0.0, 1.0], &[0.0, 0.0]);
        let h = KernelHyperparams::from_logs(MaternNu::ThreeHalves, f64::NEG_INFINITY, 0.0);
        let model = GpModel::new(&obs, crate::dynamics::NonCollectiveForce::Zero).unwrap();
        let got = model.nll(&[], &h, 1.0).unwrap();
        assert_relative_eq!(got, std::f64::consts::TAU.ln(), max_relative = 1e-12);
    }

    #[test]
    fn matches_dense_lu_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for trial in 0..25 {
            let (obs, h) = random_instance(&mut rng, trial % 3 == 0);
            let sigma = rng.random_range(0.05..0.8);
            let model = GpModel::new(&obs, crate::dynamics::NonCollectiveForce::Zero).unwrap();
            let fast = model.nll(&[], &h, sigma).unwrap();
            let cov = crate::gp::testutil::brute_force_ff_cov(&obs, &h);
            let slow = dense_lu_nll(&cov, &model.residual(&[]).unwrap(), sigma);
            assert_relative_eq!(fast, slow, max_relative = 1e-9);
        }
    }

    fn packed_nll(
        model: &GpModel<'_, f64>,
        nu: MaternNu,
        packed: &[f64],
        n_alpha: usize,
    ) -> f64 {
        let h = KernelHyperparams::from_logs(nu, packed[n_alpha], packed[n_alpha + 1]);
        model
            .nll(&packed[..n_alpha], &h, packed[n_alpha + 2].exp())
            .unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for trial in 0..12 {
            let velocity = trial % 4 == 0;
            let (obs, h) = random_instance(&mut rng, velocity);
            let force = if velocity {
                crate::dynamics::NonCollectiveForce::RayleighFriction {
                    kappa: rng.random_range(0.2..1.0),
                    p: rng.random_range(0.5..2.0),
                }
            } else if obs.order == crate::dynamics::Order::First {
                crate::dynamics::NonCollectiveForce::StubbornOpinion {
                    biases: vec![rng.random_range(-1.0..1.0)],
                    kappa: rng.random_range(0.5..2.0),
                    stubborn: vec![0],
                }
            } else {
                crate::dynamics::NonCollectiveForce::Zero
            };
            let alpha = force.pack();
            let model = GpModel::new(&obs, force).unwrap();
            let sigma: f64 = rng.random_range(0.1..0.6);
            let (_, grad) = model.nll_grad(&alpha, &h, sigma).unwrap();

            let mut packed = alpha.clone();
            packed.push(h.log_s());
            packed.push(h.log_omega());
            packed.push(sigma.ln());
            let step = 1e-5;
            for j in 0..packed.len() {
                let mut up = packed.clone();
                let mut dn = packed.clone();
                up[j] += step;
                dn[j] -= step;
                let fd = (packed_nll(&model, h.nu(), &up, alpha.len())
                    - packed_nll(&model, h.nu(), &dn, alpha.len()))
                    / (2.0 * step);
                let scale = grad[j].abs().max(1e-4);
                assert!(
                    (grad[j] - fd).abs() / scale <= 1e-5,
                    "trial {trial} component {j}: analytic {} vs fd {fd}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn zero_prior_zero_residual_alpha_gradient_vanishes() {
        let obs = two_agent_snapshot(&[0.0, 1.0], &[0.0, 0.0]);
        let force = crate::dynamics::NonCollectiveForce::StubbornOpinion {
            biases: vec![0.0],
            kappa: 0.0,
            stubborn: vec![0],
        };
        let h = KernelHyperparams::from_logs(MaternNu::ThreeHalves, f64::NEG_INFINITY, 0.0);
        let model = GpModel::new(&obs, force).unwrap();
        let (_, grad) = model.nll_grad(&[0.0, 0.0], &h, 0.5).unwrap();
        assert_eq!(grad[0], 0.0);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn exchangeability_under_agent_permutation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (obs, h) = random_instance(&mut rng, false);
            let sigma = 0.3;
            let model = GpModel::new(&obs, crate::dynamics::NonCollectiveForce::Zero).unwrap();
            let base = model.nll(&[], &h, sigma).unwrap();

            // rotate agent indices by one
            let mut permuted = obs.clone();
            let d = obs.d;
            let n = obs.n;
            for (slot, state) in obs.states.iter().enumerate() {
                for i in 0..n {
                    let dst = (i + 1) % n;
                    for c in 0..d {
                        permuted.states[slot].x[dst * d + c] = state.x[i * d + c];
                        permuted.targets[slot][dst * d + c] = obs.targets[slot][i * d + c];
                    }
                }
            }
            let model_p =
                GpModel::new(&permuted, crate::dynamics::NonCollectiveForce::Zero).unwrap();
            let perm = model_p.nll(&[], &h, sigma).unwrap();
            assert_relative_eq!(base, perm, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn factorization_failure_reports_smallest_eigenvalue() {
        // an indefinite matrix can never factor, even with jitter
        let mut mat = nalgebra::DMatrix::from_element(2, 2, 0.0);
        mat[(0, 0)] = 1.0;
        mat[(1, 1)] = -1.0;
        match cholesky_with_jitter(&mat) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("smallest eigenvalue")),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
