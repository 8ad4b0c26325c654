//! Cached factorization for O(dNML) posterior mean queries.

use crate::error::{Error, Result};
use crate::kernels::KernelHyperparams;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// Cholesky factor of `K_ff + sigma^2 I + jitter I` plus the solved
/// residual; everything a posterior query needs once training is done.
#[derive(Debug, Clone)]
pub struct CovarianceCache<T: Scalar> {
    l_factor: DMatrix<T>,
    alpha_vec: DVector<T>,
    jitter: T,
    h: KernelHyperparams<T>,
    sigma: T,
    alpha: Vec<T>,
    data_hash: String,
}

impl<T: Scalar> CovarianceCache<T> {
    pub(crate) fn new(
        l_factor: DMatrix<T>,
        alpha_vec: DVector<T>,
        jitter: T,
        h: KernelHyperparams<T>,
        sigma: T,
        alpha: Vec<T>,
        data_hash: String,
    ) -> Self {
        Self { l_factor, alpha_vec, jitter, h, sigma, alpha, data_hash }
    }

    pub fn dim(&self) -> usize {
        self.alpha_vec.len()
    }

    pub fn hyperparams(&self) -> &KernelHyperparams<T> {
        &self.h
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn force_params(&self) -> &[T] {
        &self.alpha
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn data_hash(&self) -> &str {
        &self.data_hash
    }

    pub fn l_factor(&self) -> &DMatrix<T> {
        &self.l_factor
    }

    /// Solved vector `(K_ff + sigma^2 I + jitter I)^{-1} (Z - F_alpha(Y))`.
    pub fn solved_residual(&self) -> &DVector<T> {
        &self.alpha_vec
    }

    /// Posterior mean and variance given the assembled cross covariance.
    /// The mean costs one dot product; the variance one triangular solve.
    pub(crate) fn posterior_from_cross(&self, cross: &DVector<T>, r_star: T) -> Result<(T, T)> {
        let mean = cross.dot(&self.alpha_vec);
        let half_solved = self
            .l_factor
            .solve_lower_triangular(cross)
            .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
        let prior = self.h.eval(r_star, r_star);
        let var = prior - half_solved.dot(&half_solved);
        Ok((mean, var))
    }
}

#[cfg(test)]
mod tests {
    use crate::dynamics::NonCollectiveForce;
    use crate::gp::likelihood::GpModel;
    use crate::gp::testutil::{random_instance, two_agent_snapshot};
    use crate::kernels::{KernelHyperparams, MaternNu};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn cache_reconstructs_the_factored_matrix() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
        let (obs, h) = random_instance(&mut rng, false);
        let sigma = 0.2;
        let model = GpModel::new(&obs, NonCollectiveForce::Zero).unwrap();
        let cache = model.build_cache(&[], &h, sigma).unwrap();
        let mut expected = model.tensor().ff_cov(&h).unwrap();
        let sym_err = (&expected - &expected.transpose()).abs().max();
        assert!(sym_err <= 1e-12 * expected.abs().max().max(1e-300));
        for i in 0..expected.nrows() {
            expected[(i, i)] += sigma * sigma + cache.jitter();
        }
        let rebuilt = cache.l_factor() * cache.l_factor().transpose();
        let rel = (&rebuilt - &expected).norm() / expected.norm();
        assert!(rel <= 1e-10, "factor reconstruction off by {rel}");
    }

    #[test]
    fn degenerate_prior_posterior_is_zero() {
        let obs = two_agent_snapshot(&[0.0, 1.0], &[0.4, -0.4]);
        let h = KernelHyperparams::from_logs(MaternNu::ThreeHalves, f64::NEG_INFINITY, 0.0);
        let model = GpModel::new(&obs, NonCollectiveForce::Zero).unwrap();
        let cache = model.build_cache(&[], &h, 0.5).unwrap();
        let (mean, var) = model.posterior_phi(&cache, 0.8).unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(var, 0.0);
    }

    #[test]
    fn noiseless_two_agent_posterior_interpolates_the_kernel() {
        // one snapshot at distance r with exact targets: the posterior mean
        // at r must return the generating value phi(r) = 2 v1 / r
        let r = 0.8;
        let phi = 1.3;
        let v1 = 0.5 * phi * r;
        let obs = two_agent_snapshot(&[0.0, r], &[v1, -v1]);
        let h = KernelHyperparams::new(MaternNu::ThreeHalves, 1.0, 1.0).unwrap();
        let model = GpModel::new(&obs, NonCollectiveForce::Zero).unwrap();
        let cache = model.build_cache(&[], &h, 0.0).unwrap();
        let (mean, var) = model.posterior_phi(&cache, r).unwrap();
        assert_relative_eq!(mean, phi, max_relative = 1e-6);
        assert_relative_eq!(mean, 2.0 * v1 / r, max_relative = 1e-6);
        assert!(var >= -1e-10 && var <= 1e-6);
    }

    #[test]
    fn variance_bounded_by_prior_and_shrinks_with_data() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            let (mut obs, h) = random_instance(&mut rng, false);
            let sigma = rng.random_range(0.05..0.5);
            let s2 = h.s() * h.s();
            let model = GpModel::new(&obs, NonCollectiveForce::Zero).unwrap();
            let cache = model.build_cache(&[], &h, sigma).unwrap();
            let queries: Vec<f64> = (0..8).map(|q| 0.3 * q as f64).collect();
            let mut before = Vec::new();
            for &q in &queries {
                let (_, var) = model.posterior_phi(&cache, q).unwrap();
                assert!(var >= -1e-10, "trial {trial}: variance {var} negative");
                assert!(var <= s2 + 1e-10, "trial {trial}: variance {var} above prior {s2}");
                before.push(var);
            }

            // appending one snapshot never increases the pointwise variance
            let dim = obs.d * obs.n;
            let extra_state = crate::dynamics::State {
                x: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                v: obs.states[0]
                    .v
                    .as_ref()
                    .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()),
                t: obs.times[obs.l_count - 1] + 1.0,
            };
            let mut states = Vec::new();
            let mut targets = Vec::new();
            for m in 0..obs.m_count {
                for l in 0..obs.l_count {
                    states.push(obs.state(m, l).clone());
                    targets.push(obs.target(m, l).to_vec());
                }
                states.push(extra_state.clone());
                targets.push((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
            }
            obs.times.push(extra_state.t);
            obs.l_count += 1;
            obs.states = states;
            obs.targets = targets;
            obs.validate().unwrap();

            let model2 = GpModel::new(&obs, NonCollectiveForce::Zero).unwrap();
            let cache2 = model2.build_cache(&[], &h, sigma).unwrap();
            for (idx, &q) in queries.iter().enumerate() {
                let (_, var) = model2.posterior_phi(&cache2, q).unwrap();
                assert!(
                    var <= before[idx] + 1e-9,
                    "trial {trial}: variance grew from {} to {var} at r = {q}",
                    before[idx]
                );
            }
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let obs_a = two_agent_snapshot(&[0.0, 1.0], &[0.3, -0.3]);
        let obs_b = two_agent_snapshot(&[0.0, 1.5], &[0.3, -0.3]);
        let h = KernelHyperparams::new(MaternNu::ThreeHalves, 1.0, 1.0).unwrap();
        let model_a = GpModel::new(&obs_a, NonCollectiveForce::Zero).unwrap();
        let model_b = GpModel::new(&obs_b, NonCollectiveForce::Zero).unwrap();
        let cache_a = model_a.build_cache(&[], &h, 0.1).unwrap();
        match model_b.posterior_phi(&cache_a, 0.5) {
            Err(crate::error::Error::Contract(_)) => {}
            other => panic!("expected contract error, got {other:?}"),
        }
    }
}
