//! Joint training of force parameters, kernel hyperparameters, and noise by
//! minimizing the negative log marginal likelihood.

use crate::dynamics::{InteractionVariable, NonCollectiveForce, ObservationSet, Order};
use crate::error::{Error, Result};
use crate::gp::{CovarianceCache, GpModel};
use crate::kernels::{KernelHyperparams, MaternNu};
use crate::optimize::{minimize, LbfgsConfig, OptimizeResult, TraceStep};
use crate::scalar::{real, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::{Cell, RefCell};

/// RNG stream offset for restart jitter (data generation uses the raw
/// trajectory index as its stream).
const RESTART_STREAM_BASE: u64 = 2_000_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct FitConfig<T: Scalar> {
    pub init_alpha: Vec<T>,
    pub init_s: T,
    pub init_omega: T,
    pub init_sigma: T,
    pub nu: MaternNu,
    /// Objective-evaluation budget per restart.
    pub max_evals: usize,
    pub grad_tol: T,
    pub memory: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl<T: Scalar> FitConfig<T> {
    /// Generic defaults: every force parameter starts at 1/2, unit
    /// amplitude, length-scale a quarter of the largest observed pairwise
    /// distance, noise 0.1.
    pub fn defaults(obs: &ObservationSet<T>, force: &NonCollectiveForce<T>) -> Self {
        let r_max = obs.max_pairwise_distance();
        let omega = if r_max > T::zero() { r_max / real(4.0) } else { T::one() };
        Self {
            init_alpha: vec![real(0.5); force.param_count()],
            init_s: T::one(),
            init_omega: omega,
            init_sigma: real(0.1),
            nu: MaternNu::ThreeHalves,
            max_evals: 600,
            grad_tol: real(1e-6),
            memory: 10,
            restarts: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidInput("need at least one restart".into()));
        }
        if !(self.grad_tol > T::zero()) {
            return Err(Error::InvalidInput("gradient tolerance must be positive".into()));
        }
        if !(self.init_s > T::zero()) || !(self.init_omega > T::zero()) || !(self.init_sigma > T::zero())
        {
            return Err(Error::InvalidInput("initial s, omega, sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Summary of an optimizer run, stored in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct TraceSummary<T: Scalar> {
    pub iterations: usize,
    pub evals: usize,
    pub final_grad_inf_norm: T,
    pub converged: bool,
    pub budget_exhausted: bool,
    pub restarts: usize,
    pub best_restart: usize,
}

/// A fitted model: the system skeleton, trained parameters, and (in
/// memory) the factorization cache for posterior queries.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct TrainedModel<T: Scalar> {
    pub d: usize,
    pub n: usize,
    pub order: Order,
    pub interaction: InteractionVariable,
    /// Force family with the fitted parameters inside.
    pub force: NonCollectiveForce<T>,
    pub kernel: KernelHyperparams<T>,
    pub sigma: T,
    pub nll: T,
    pub trace: TraceSummary<T>,
    /// Hash of the training observation set.
    pub data_hash: String,
    #[serde(skip)]
    cache: Option<CovarianceCache<T>>,
    #[serde(skip)]
    pub trace_steps: Vec<TraceStep<T>>,
}

impl<T: Scalar + Serialize + serde::de::DeserializeOwned> TrainedModel<T> {
    pub fn alpha(&self) -> Vec<T> {
        self.force.pack()
    }

    pub fn cache(&self) -> Option<&CovarianceCache<T>> {
        self.cache.as_ref()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Rebuild the likelihood model for `obs` and (re)attach the
    /// factorization cache. `obs` must be the training set the model
    /// references.
    pub fn attach<'a>(&mut self, obs: &'a ObservationSet<T>) -> Result<GpModel<'a, T>> {
        let model = GpModel::new(obs, self.force.clone())?;
        if model.data_hash() != self.data_hash {
            return Err(Error::Contract(format!(
                "observation set hash {} does not match the model's training hash {}",
                model.data_hash(),
                self.data_hash
            )));
        }
        if self.cache.is_none() {
            self.cache = Some(model.build_cache(&self.alpha(), &self.kernel, self.sigma)?);
        }
        Ok(model)
    }
}

/// Adapter between the optimizer and the likelihood: packs
/// `[alpha.., log s, log omega, log sigma]`, maps non-finite objective
/// values to `+inf` with a zero gradient, memoizes the last evaluation, and
/// counts distinct evaluations.
pub struct PackedObjective<'m, 'a, T: Scalar> {
    model: &'m GpModel<'a, T>,
    nu: MaternNu,
    evals: Cell<usize>,
    last: RefCell<Option<(Vec<T>, T, Vec<T>)>>,
}

impl<'m, 'a, T: Scalar + Serialize + serde::de::DeserializeOwned> PackedObjective<'m, 'a, T> {
    pub fn new(model: &'m GpModel<'a, T>, nu: MaternNu) -> Self {
        Self { model, nu, evals: Cell::new(0), last: RefCell::new(None) }
    }

    pub fn eval_count(&self) -> usize {
        self.evals.get()
    }

    pub fn pack(alpha: &[T], h: &KernelHyperparams<T>, sigma: T) -> Vec<T> {
        let mut packed = alpha.to_vec();
        packed.push(h.log_s());
        packed.push(h.log_omega());
        packed.push(sigma.ln());
        packed
    }

    pub fn unpack(&self, packed: &[T]) -> (Vec<T>, KernelHyperparams<T>, T) {
        let n_alpha = self.model.param_count();
        let alpha = packed[..n_alpha].to_vec();
        let h = KernelHyperparams::from_logs(self.nu, packed[n_alpha], packed[n_alpha + 1]);
        let sigma = packed[n_alpha + 2].exp();
        (alpha, h, sigma)
    }

    /// Objective value and gradient at a packed point.
    pub fn eval(&self, packed: &[T]) -> (T, Vec<T>) {
        if let Some((x, value, grad)) = self.last.borrow().as_ref() {
            if x.as_slice() == packed {
                return (*value, grad.clone());
            }
        }
        self.evals.set(self.evals.get() + 1);
        let (alpha, h, sigma) = self.unpack(packed);
        let outcome = self.model.nll_grad(&alpha, &h, sigma);
        let (value, grad) = match outcome {
            Ok((value, grad)) if value.is_finite() && grad.iter().all(|g| g.is_finite()) => {
                (value, grad)
            }
            _ => (real(f64::INFINITY), vec![T::zero(); packed.len()]),
        };
        *self.last.borrow_mut() = Some((packed.to_vec(), value, grad.clone()));
        (value, grad)
    }
}

/// Minimize the NLL over `(alpha, log s, log omega, log sigma)` and package
/// the best local minimum across restarts.
pub fn fit<T: Scalar + Serialize + serde::de::DeserializeOwned>(
    obs: &ObservationSet<T>,
    force: &NonCollectiveForce<T>,
    config: &FitConfig<T>,
) -> Result<TrainedModel<T>> {
    config.validate()?;
    if config.init_alpha.len() != force.param_count() {
        return Err(Error::InvalidInput(format!(
            "force family takes {} parameters, config provides {}",
            force.param_count(),
            config.init_alpha.len()
        )));
    }
    let model = GpModel::new(obs, force.clone())?;
    let objective = PackedObjective::new(&model, config.nu);
    let h0 = KernelHyperparams::new(config.nu, config.init_s, config.init_omega)?;
    let base = PackedObjective::<T>::pack(&config.init_alpha, &h0, config.init_sigma);

    let lbfgs = LbfgsConfig {
        memory: config.memory,
        max_evals: config.max_evals,
        grad_tol: config.grad_tol,
        ..Default::default()
    };

    let mut best: Option<(usize, OptimizeResult<T>)> = None;
    for restart in 0..config.restarts {
        let start = if restart == 0 {
            base.clone()
        } else {
            // jittered restart, seeded on its own stream
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(RESTART_STREAM_BASE + restart as u64);
            base.iter()
                .map(|x| *x + real::<T>(rng.random_range(-0.5..0.5)))
                .collect()
        };
        if config.max_evals == 0 {
            // budget contract: hand back the initial parameters untouched
            let result = OptimizeResult {
                x: start,
                value: real(f64::INFINITY),
                grad: vec![T::zero(); base.len()],
                evals: 0,
                iterations: 0,
                converged: false,
                budget_exhausted: true,
                trace: Vec::new(),
            };
            best = Some((restart, result));
            break;
        }
        match minimize(|x| objective.eval(x), &start, &lbfgs) {
            Ok(result) => {
                if result.value.is_finite()
                    && best.as_ref().map_or(true, |(_, b)| result.value < b.value)
                {
                    best = Some((restart, result));
                } else if best.is_none() && config.max_evals > 0 && restart == config.restarts - 1
                {
                    best = Some((restart, result));
                }
            }
            Err(Error::Optimization(_)) => continue,
            Err(other) => return Err(other),
        }
    }

    let (best_restart, result) = best.ok_or_else(|| {
        Error::Optimization("no restart produced a finite objective value".into())
    })?;
    if result.evals > 0 && !result.value.is_finite() {
        return Err(Error::Optimization(format!(
            "optimizer never reached a finite NLL (final value {})",
            result.value
        )));
    }

    let (alpha, kernel, sigma) = objective.unpack(&result.x);
    let cache = model.build_cache(&alpha, &kernel, sigma)?;
    let nll = if result.value.is_finite() {
        result.value
    } else {
        model.nll(&alpha, &kernel, sigma)?
    };
    Ok(TrainedModel {
        d: obs.d,
        n: obs.n,
        order: obs.order,
        interaction: obs.interaction,
        force: force.with_params(&alpha)?,
        kernel,
        sigma,
        nll,
        trace: TraceSummary {
            iterations: result.iterations,
            evals: result.evals,
            final_grad_inf_norm: result.grad_inf_norm(),
            converged: result.converged,
            budget_exhausted: result.budget_exhausted,
            restarts: config.restarts,
            best_restart,
        },
        data_hash: model.data_hash().to_string(),
        cache: Some(cache),
        trace_steps: result.trace,
    })
}
