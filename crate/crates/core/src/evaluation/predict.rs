//! Prediction with the learned system and scoring against the truth.

use super::{
    error_metrics, estimate_kernel_curve, flocking_score, trajectory_error, EmpiricalMeasure,
    ErrorMetrics,
};
use crate::dynamics::{integrate, InteractionKernel, ObservationSet, Order, ParticleSystemSpec, State};
use crate::error::{Error, Result};
use crate::interp::InterpTable;
use crate::scalar::{real, Scalar};
use crate::training::TrainedModel;
use serde::{Deserialize, Serialize};

/// Grid used when tabulating the posterior mean for the integrator; per-step
/// posterior solves would dominate the runtime, and the interpolation error
/// of a monotone cubic on 1000 points sits below the integrator tolerance.
pub const KERNEL_TABLE_POINTS: usize = 1000;

/// Replace the template's kernel by the tabulated posterior mean and its
/// force parameters by the fitted ones. The table covers `[0, 1.5 r_max]`
/// and holds its endpoint values outside.
pub fn learned_system<T: Scalar + Serialize + serde::de::DeserializeOwned>(
    trained: &mut TrainedModel<T>,
    obs: &ObservationSet<T>,
    template: &ParticleSystemSpec<T>,
    r_max: T,
) -> Result<ParticleSystemSpec<T>> {
    if template.d != trained.d || template.n != trained.n || template.order != trained.order {
        return Err(Error::InvalidInput(
            "trained model and template system disagree on (d, N, order)".into(),
        ));
    }
    if !(r_max > T::zero()) {
        return Err(Error::InvalidInput("r_max must be positive".into()));
    }
    let top = r_max * real(1.5);
    let grid: Vec<T> = (0..KERNEL_TABLE_POINTS)
        .map(|i| top * real(i as f64) / real((KERNEL_TABLE_POINTS - 1) as f64))
        .collect();
    let estimate = estimate_kernel_curve(trained, obs, &grid)?;
    let table = InterpTable::new(estimate.grid, estimate.mean)?;
    let spec = template
        .clone()
        .with_kernel(InteractionKernel::Table(table))
        .with_force_params(&trained.alpha())?;
    Ok(spec)
}

/// Comparison of truth and prediction from shared initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct PredictionReport<T: Scalar> {
    /// Mean over initial conditions of the max-in-time state error on
    /// `[0, t_train]`.
    pub train_error: T,
    /// Same on `[t_train, t_final]`.
    pub future_error: T,
    pub kernel_errors: ErrorMetrics<T>,
    /// Final-time flocking scores (prediction, truth), second-order systems
    /// only; skipped when some agent ends up at rest.
    pub flocking_predicted: Option<T>,
    pub flocking_truth: Option<T>,
}

/// Integrate the learned system next to the truth from each initial
/// condition, then score trajectories, kernel error, and (for second-order
/// systems) the final-time flocking alignment.
#[allow(clippy::too_many_arguments)]
pub fn predict_and_score<T: Scalar + Serialize + serde::de::DeserializeOwned>(
    trained: &mut TrainedModel<T>,
    obs: &ObservationSet<T>,
    truth: &ParticleSystemSpec<T>,
    initial_conditions: &[State<T>],
    t_train: T,
    t_final: T,
    rho: &EmpiricalMeasure<T>,
) -> Result<PredictionReport<T>> {
    if initial_conditions.is_empty() {
        return Err(Error::InvalidInput("need at least one initial condition".into()));
    }
    if !(t_train > T::zero()) || !(t_final > t_train) {
        return Err(Error::InvalidInput("need 0 < t_train < t_final".into()));
    }
    let learned = learned_system(trained, obs, truth, rho.r_max)?;

    let steps = 200usize;
    let grid: Vec<T> = (0..=steps)
        .map(|i| t_final * real(i as f64) / real(steps as f64))
        .collect();
    let rtol: T = real(crate::dynamics::DEFAULT_RTOL);
    let atol: T = real(crate::dynamics::DEFAULT_ATOL);

    let mut train_total = T::zero();
    let mut future_total = T::zero();
    let mut flock_pred = T::zero();
    let mut flock_truth = T::zero();
    let mut flock_count = 0usize;
    for ic in initial_conditions {
        let truth_states = integrate(truth, ic, &grid, rtol, atol)?;
        let pred_states = integrate(&learned, ic, &grid, rtol, atol)?;
        train_total += trajectory_error(&truth_states, &pred_states, (T::zero(), t_train))?;
        future_total += trajectory_error(&truth_states, &pred_states, (t_train, t_final))?;
        if truth.order == Order::Second {
            let last_pred = pred_states.last().expect("nonempty grid");
            let last_truth = truth_states.last().expect("nonempty grid");
            let pv = last_pred.v.as_ref().expect("second order");
            let tv = last_truth.v.as_ref().expect("second order");
            if let (Ok(p), Ok(t)) =
                (flocking_score(truth.d, pv), flocking_score(truth.d, tv))
            {
                flock_pred += p.score;
                flock_truth += t.score;
                flock_count += 1;
            }
        }
    }
    let inv = T::one() / real::<T>(initial_conditions.len() as f64);

    let top = rho.r_max * real(1.5);
    let curve_grid: Vec<T> = (0..400)
        .map(|i| top * real(i as f64) / real(399.0))
        .collect();
    let estimate = estimate_kernel_curve(trained, obs, &curve_grid)?;
    let kernel_errors = error_metrics(&estimate, |r| truth.kernel.eval(r), rho)?;

    Ok(PredictionReport {
        train_error: train_total * inv,
        future_error: future_total * inv,
        kernel_errors,
        flocking_predicted: (flock_count > 0).then(|| flock_pred / real(flock_count as f64)),
        flocking_truth: (flock_count > 0).then(|| flock_truth / real(flock_count as f64)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        generate_observations, InteractionVariable, Mu0, NonCollectiveForce,
    };
    use crate::training::{fit, FitConfig};

    #[test]
    fn known_force_zero_kernel_predicts_exactly() {
        // truth phi == 0 and the fitted model pinned at the truth: the
        // prediction reproduces the trajectories up to integrator tolerance
        let spec = ParticleSystemSpec::new(
            1,
            3,
            crate::dynamics::Order::First,
            InteractionVariable::PositionDifference,
            NonCollectiveForce::StubbornOpinion {
                biases: vec![1.0, -1.0],
                kappa: 2.0,
                stubborn: vec![0, 1],
            },
            InteractionKernel::Zero,
            Mu0::positions(-1.0, 1.0),
        )
        .unwrap();
        let obs = generate_observations(&spec, 3, 4, 2.0, 0.0, 13).unwrap();
        let mut config = FitConfig::defaults(&obs, &spec.force);
        // degenerate prior and exact parameters, no optimization
        config.init_alpha = vec![1.0, -1.0, 2.0];
        config.init_s = 1e-12;
        config.init_omega = 1.0;
        config.init_sigma = 1e-3;
        config.max_evals = 0;
        let mut trained = fit(&obs, &spec.force, &config).unwrap();
        let rho = crate::evaluation::empirical_rho(&spec, 50, 3, 2.0, 50, 1).unwrap();
        let ics: Vec<State<f64>> = (0..2)
            .map(|m| {
                let mut s = obs.state(m, 0).clone();
                s.t = 0.0;
                s
            })
            .collect();
        let report = match predict_and_score(&mut trained, &obs, &spec, &ics, 2.0, 3.0, &rho) {
            Ok(r) => r,
            // phi == 0 truth has zero norm, so kernel errors are undefined
            Err(Error::UndefinedRelativeError) => return,
            Err(other) => panic!("unexpected error {other:?}"),
        };
        assert!(report.train_error < 1e-4);
        drop(report);
    }

    #[test]
    fn learned_system_replaces_kernel_and_params() {
        let spec = ParticleSystemSpec::new(
            1,
            4,
            crate::dynamics::Order::First,
            InteractionVariable::PositionDifference,
            NonCollectiveForce::Zero,
            InteractionKernel::PiecewiseOpinion,
            Mu0::positions(-1.0, 1.0),
        )
        .unwrap();
        let obs = generate_observations(&spec, 4, 4, 3.0, 0.02, 5).unwrap();
        let mut config = FitConfig::defaults(&obs, &spec.force);
        config.max_evals = 120;
        let mut trained = fit(&obs, &spec.force, &config).unwrap();
        let learned = learned_system(&mut trained, &obs, &spec, 2.0).unwrap();
        match &learned.kernel {
            InteractionKernel::Table(table) => {
                // learned kernel should be close to the truth on the data
                // range after a real fit
                let mid: f64 = table.eval(0.5);
                assert!((mid - 1.0).abs() < 0.5, "phi(0.5) learned as {mid}");
            }
            other => panic!("expected a table kernel, got {other:?}"),
        }
    }
}
