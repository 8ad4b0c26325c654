//! Executable checks of the supporting theory: the closed-form kernel ridge
//! regression solution, its equality with the GP posterior mean under the
//! matched prior scaling, an empirical coercivity constant, and a
//! convergence-in-M study.

use crate::dynamics::{
    generate_observations, integrate, observation_times, ObservationSet, ParticleSystemSpec,
};
use crate::error::{Error, Result};
use crate::evaluation::{empirical_rho, EmpiricalMeasure};
use crate::gp::{cholesky_with_jitter, DiffTensor, GpModel};
use crate::kernels::KernelHyperparams;
use crate::scalar::{double, real, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// RNG stream offsets (coexisting with data generation on streams `0..M`).
const PROBE_STREAM: u64 = 3_000_000;
const COERCIVITY_STREAM_BASE: u64 = 5_000_000;

/// Kernel ridge regression solution in representer form: one coefficient
/// per ordered pairwise distance of the training set (`M L N^2` of them,
/// zeros on the `i = j` slots).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct KrrSolution<T: Scalar> {
    pub centers: Vec<T>,
    pub coefficients: Vec<T>,
    pub lambda: T,
    pub h: KernelHyperparams<T>,
}

impl<T: Scalar> KrrSolution<T> {
    /// Evaluate the estimator `sum_q c_q K(center_q, r)`.
    pub fn eval(&self, r: T) -> T {
        self.centers
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, c)| **c != T::zero())
            .map(|(center, c)| *c * self.h.eval(*center, r))
            .sum()
    }

}

/// Solve the regularized least-squares problem over the RKHS span of the
/// training distances: coefficients `(1/N) r_X^T (K_ff + lambda N M L I)^{-1} Z`.
/// Targets are used as stored; second-order sets must already hold
/// residuals `Z - F(Y)`.
pub fn krr_fit<T: Scalar>(
    obs: &ObservationSet<T>,
    h: &KernelHyperparams<T>,
    lambda: T,
) -> Result<KrrSolution<T>> {
    if !(lambda > T::zero()) {
        return Err(Error::InvalidInput("regularization must be positive".into()));
    }
    let tensor = DiffTensor::new(obs)?;
    let mut a = tensor.ff_cov(h)?;
    let ridge = lambda * real::<T>((obs.n * obs.m_count * obs.l_count) as f64);
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    let (chol, _) = cholesky_with_jitter(&a)?;
    let w = chol.solve(&nalgebra::DVector::from_vec(obs.stacked_targets()));

    let n = obs.n;
    let d = obs.d;
    let inv_n = T::one() / real::<T>(n as f64);
    let snapshots = obs.m_count * obs.l_count;
    let mut centers = Vec::with_capacity(snapshots * n * n);
    let mut coefficients = Vec::with_capacity(snapshots * n * n);
    for a_idx in 0..snapshots {
        let dists = tensor.snapshot_dists(a_idx);
        let vecs = tensor.snapshot_vecs(a_idx);
        let mut pair = 0usize;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    centers.push(T::zero());
                    coefficients.push(T::zero());
                    continue;
                }
                centers.push(dists[pair]);
                let mut dot = T::zero();
                for c in 0..d {
                    dot += vecs[pair * d + c] * w[(a_idx * n + i) * d + c];
                }
                coefficients.push(inv_n * dot);
                pair += 1;
            }
        }
    }
    Ok(KrrSolution { centers, coefficients, lambda, h: *h })
}

/// How to scale the GP prior when comparing with the KRR estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorScaling {
    /// The matched scaling `K~ = sigma^2 K / (M N L lambda)`.
    Matched,
    /// Deliberately wrong scaling (missing the `1/(M N L)` factor); used as
    /// a negative control to confirm the check has power.
    MissingDataFactor,
}

/// Max absolute discrepancy over `grid` between the GP posterior mean under
/// the scaled prior and the KRR estimator with the base kernel.
pub fn gp_krr_discrepancy<T: Scalar + Serialize + serde::de::DeserializeOwned>(
    obs: &ObservationSet<T>,
    h: &KernelHyperparams<T>,
    lambda: T,
    sigma: T,
    grid: &[T],
    scaling: PriorScaling,
) -> Result<T> {
    if !(sigma > T::zero()) {
        return Err(Error::InvalidInput("the equivalence needs sigma > 0".into()));
    }
    let krr = krr_fit(obs, h, lambda)?;

    let data_factor = match scaling {
        PriorScaling::Matched => real::<T>((obs.m_count * obs.n * obs.l_count) as f64),
        PriorScaling::MissingDataFactor => T::one(),
    };
    let scaled_s = h.s() * sigma / (data_factor * lambda).sqrt();
    let scaled = KernelHyperparams::new(h.nu(), scaled_s, h.omega())?;
    let model = GpModel::new(obs, crate::dynamics::NonCollectiveForce::Zero)?;
    let cache = model.build_cache(&[], &scaled, sigma)?;

    let mut worst = T::zero();
    for &r in grid {
        let (mean, _) = model.posterior_phi(&cache, r)?;
        worst = worst.max((mean - krr.eval(r)).abs());
    }
    Ok(worst)
}

/// One probe of the coercivity estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct ProbeReport<T: Scalar> {
    pub name: String,
    /// `|f_phi|^2_{L2(rho_X)} / |phi|^2_{L2(rho_tilde)}`.
    pub ratio: T,
    pub std_error: T,
    pub numerator: T,
    pub denominator: T,
    pub skipped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct CoercivityReport<T: Scalar> {
    pub probes: Vec<ProbeReport<T>>,
    /// Empirical coercivity constant: the smallest non-skipped ratio.
    pub min_ratio: T,
    /// `(N - 1) / N`, the theoretical ceiling for every ratio.
    pub upper_bound: T,
    pub n_mc: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct CoercivityConfig<T: Scalar> {
    pub n_mc: usize,
    pub l: usize,
    pub t_end: T,
    pub seed: u64,
    /// Number of random RKHS-span probes appended to the caller's list.
    pub random_probes: usize,
    /// Kernel generating the random probes.
    pub probe_kernel: KernelHyperparams<T>,
    /// Upper end of the random probe centers.
    pub r_max: T,
}

/// Monte Carlo estimate of the coercivity ratios for a set of probe
/// kernels. Both norms are estimated on the same trajectory ensemble, so
/// structural identities (the exact 1/4 for two agents) hold sample-wise.
pub fn estimate_coercivity<T: Scalar + Serialize + serde::de::DeserializeOwned>(
    spec: &ParticleSystemSpec<T>,
    named_probes: &[(String, crate::dynamics::InteractionKernel<T>)],
    cfg: &CoercivityConfig<T>,
) -> Result<CoercivityReport<T>> {
    if cfg.n_mc < 2 {
        return Err(Error::InvalidInput("need at least two Monte Carlo samples".into()));
    }
    spec.validate()?;
    let mut probes = named_probes.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(PROBE_STREAM);
    for p in 0..cfg.random_probes {
        let count = 5;
        let centers: Vec<T> =
            (0..count).map(|_| real(rng.random_range(0.0..double(cfg.r_max)))).collect();
        let weights: Vec<T> = (0..count)
            .map(|_| real(rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)))
            .collect();
        probes.push((
            format!("rkhs_span_{p}"),
            crate::dynamics::InteractionKernel::RkhsSpan {
                nu: cfg.probe_kernel.nu(),
                omega: cfg.probe_kernel.omega(),
                centers,
                weights,
            },
        ));
    }

    let times = observation_times(cfg.l, cfg.t_end);
    let rtol: T = real(crate::dynamics::DEFAULT_RTOL);
    let atol: T = real(crate::dynamics::DEFAULT_ATOL);
    let d = spec.d;
    let n = spec.n;
    let n_probes = probes.len();
    // per-probe accumulators over samples
    let mut nums = vec![Vec::with_capacity(cfg.n_mc); n_probes];
    let mut dens = vec![Vec::with_capacity(cfg.n_mc); n_probes];
    for j in 0..cfg.n_mc {
        let mut traj_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        traj_rng.set_stream(COERCIVITY_STREAM_BASE + j as u64);
        let initial = spec.mu0.sample(d, n, spec.order, &mut traj_rng);
        let states = if times.len() == 1 && times[0] == T::zero() {
            vec![initial]
        } else {
            integrate(spec, &initial, &times, rtol, atol)?
        };
        let inv_ln = T::one() / real::<T>((cfg.l * n) as f64);
        let pairs_per = n * (n - 1) / 2;
        let inv_lpairs = T::one() / real::<T>((cfg.l * pairs_per) as f64);
        for (p, (_, probe)) in probes.iter().enumerate() {
            let mut num = T::zero();
            let mut den = T::zero();
            for state in &states {
                // force field of the probe at this snapshot
                for i in 0..n {
                    let mut f_i = vec![T::zero(); d];
                    for k in 0..n {
                        if k == i {
                            continue;
                        }
                        let mut r2 = T::zero();
                        for c in 0..d {
                            let diff = state.x[k * d + c] - state.x[i * d + c];
                            r2 += diff * diff;
                        }
                        let r = r2.sqrt();
                        let w = probe.eval(r) / real::<T>(n as f64);
                        for c in 0..d {
                            f_i[c] += w * (state.x[k * d + c] - state.x[i * d + c]);
                        }
                    }
                    num += f_i.iter().map(|x| *x * *x).sum::<T>() * inv_ln;
                }
                for i in 0..n {
                    for k in (i + 1)..n {
                        let mut r2 = T::zero();
                        for c in 0..d {
                            let diff = state.x[k * d + c] - state.x[i * d + c];
                            r2 += diff * diff;
                        }
                        let r = r2.sqrt();
                        let phi = probe.eval(r);
                        den += phi * phi * r2 * inv_lpairs;
                    }
                }
            }
            nums[p].push(num);
            dens[p].push(den);
        }
    }

    let n_mc_t = real::<T>(cfg.n_mc as f64);
    let mut reports = Vec::with_capacity(n_probes);
    let mut min_ratio: Option<T> = None;
    for (p, (name, _)) in probes.iter().enumerate() {
        let num_mean = nums[p].iter().copied().sum::<T>() / n_mc_t;
        let den_mean = dens[p].iter().copied().sum::<T>() / n_mc_t;
        if !(den_mean > T::zero()) {
            reports.push(ProbeReport {
                name: name.clone(),
                ratio: T::zero(),
                std_error: T::zero(),
                numerator: num_mean,
                denominator: den_mean,
                skipped: true,
            });
            continue;
        }
        let ratio = num_mean / den_mean;
        // delta-method standard error of the ratio of means
        let mut var_num = T::zero();
        let mut var_den = T::zero();
        let mut cov = T::zero();
        for j in 0..cfg.n_mc {
            let dn = nums[p][j] - num_mean;
            let dd = dens[p][j] - den_mean;
            var_num += dn * dn;
            var_den += dd * dd;
            cov += dn * dd;
        }
        let unbias = T::one() / real::<T>((cfg.n_mc - 1) as f64);
        var_num *= unbias;
        var_den *= unbias;
        cov *= unbias;
        let two = real::<T>(2.0);
        let var_ratio = ((var_num + ratio * ratio * var_den - two * ratio * cov)
            / (den_mean * den_mean))
            .max(T::zero())
            / n_mc_t;
        let report = ProbeReport {
            name: name.clone(),
            ratio,
            std_error: var_ratio.sqrt(),
            numerator: num_mean,
            denominator: den_mean,
            skipped: false,
        };
        min_ratio = Some(match min_ratio {
            Some(best) => best.min(ratio),
            None => ratio,
        });
        reports.push(report);
    }
    let min_ratio = min_ratio
        .ok_or_else(|| Error::InvalidInput("all probes were skipped".into()))?;
    Ok(CoercivityReport {
        probes: reports,
        min_ratio,
        upper_bound: real::<T>((n - 1) as f64) / real::<T>(n as f64),
        n_mc: cfg.n_mc,
    })
}

/// One (M, seed) cell of the convergence study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct ConvergenceCell<T: Scalar> {
    pub m: usize,
    pub seed: u64,
    pub lambda: T,
    /// Absolute `rho_tilde`-weighted L2 error on the supported region.
    pub l2_error: T,
    /// Absolute sup error on the supported region.
    pub sup_error: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct ConvergenceTable<T: Scalar> {
    pub cells: Vec<ConvergenceCell<T>>,
    /// `(M, median L2 error)` per entry of the M list.
    pub medians: Vec<(usize, T)>,
    /// Log-log slope of the median error against M.
    pub slope: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct ConvergenceConfig<T: Scalar> {
    pub l: usize,
    pub t_end: T,
    pub sigma: T,
    /// Source-condition exponent in the regularization rule
    /// `lambda(M) = M^{-1/(2 gamma + 1)}`.
    pub gamma: f64,
    /// Trajectories for the reference measure.
    pub measure_trajectories: usize,
    pub bins: usize,
    pub seeds: Vec<u64>,
}

impl<T: Scalar> Default for ConvergenceConfig<T> {
    fn default() -> Self {
        Self {
            l: 2,
            t_end: real(1.0),
            sigma: real(0.05),
            gamma: 0.5,
            measure_trajectories: 1000,
            bins: 100,
            seeds: (0..5).collect(),
        }
    }
}

/// KRR error against the true kernel for growing trajectory counts, with
/// `lambda` following the theoretical schedule.
pub fn convergence_study<T: Scalar + Serialize + serde::de::DeserializeOwned>(
    spec: &ParticleSystemSpec<T>,
    h: &KernelHyperparams<T>,
    m_list: &[usize],
    cfg: &ConvergenceConfig<T>,
) -> Result<ConvergenceTable<T>> {
    if m_list.is_empty() {
        return Ok(ConvergenceTable { cells: Vec::new(), medians: Vec::new(), slope: T::zero() });
    }
    if m_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("M list must be strictly increasing".into()));
    }
    let rho = empirical_rho(
        spec,
        cfg.measure_trajectories,
        cfg.l,
        cfg.t_end,
        cfg.bins,
        0,
    )?;
    // cells are independent; run them in parallel, collect in order
    let jobs: Vec<(usize, u64)> = m_list
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&seed| (m, seed)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(m, seed)| {
            let lambda: T = real((m as f64).powf(-1.0 / (2.0 * cfg.gamma + 1.0)));
            let obs = generate_observations(spec, m, cfg.l, cfg.t_end, cfg.sigma, seed)?;
            let krr = krr_fit(&obs, h, lambda)?;
            let (l2, sup) = krr_errors_on(&krr, spec, &rho);
            Ok(ConvergenceCell { m, seed, lambda, l2_error: l2, sup_error: sup })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut medians = Vec::new();
    for &m in m_list {
        let mut l2s: Vec<T> =
            cells.iter().filter(|c| c.m == m).map(|c| c.l2_error).collect();
        medians.push((m, median(&mut l2s)));
    }
    let slope = loglog_slope(&medians);
    Ok(ConvergenceTable { cells, medians, slope })
}

fn krr_errors_on<T: Scalar>(
    krr: &KrrSolution<T>,
    spec: &ParticleSystemSpec<T>,
    rho: &EmpiricalMeasure<T>,
) -> (T, T) {
    let mut l2_sq = T::zero();
    let mut sup = T::zero();
    for bin in 0..rho.bins() {
        if !(rho.rho[bin] > T::zero()) {
            continue;
        }
        let r = rho.center(bin);
        let diff = krr.eval(r) - spec.kernel.eval(r);
        l2_sq += diff * diff * rho.rho_tilde[bin];
        sup = sup.max(diff.abs());
    }
    (l2_sq.sqrt(), sup)
}

fn median<T: Scalar>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) * real(0.5)
    }
}

fn loglog_slope<T: Scalar>(medians: &[(usize, T)]) -> T {
    if medians.len() < 2 {
        return T::zero();
    }
    let points: Vec<(f64, f64)> = medians
        .iter()
        .map(|(m, e)| ((*m as f64).ln(), double(*e).ln()))
        .collect();
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    real((n * sxy - sx * sy) / (n * sxx - sx * sx))
}
