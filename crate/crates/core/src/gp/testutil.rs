//! Brute-force oracles and instance generators shared by the gp tests.
//!
//! The oracles are deliberately naive quadruple loops over the covariance
//! definitions, written straight from the block formulas and independent of
//! the production assembly path.

use crate::dynamics::{InteractionVariable, ObservationSet, Order, State};
use crate::kernels::{KernelHyperparams, MaternNu};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// One first-order snapshot of two 1-D agents with given velocity targets.
pub fn two_agent_snapshot(x: &[f64], targets: &[f64]) -> ObservationSet<f64> {
    ObservationSet {
        d: 1,
        n: 2,
        order: Order::First,
        interaction: InteractionVariable::PositionDifference,
        m_count: 1,
        l_count: 1,
        times: vec![0.0],
        states: vec![State::first_order(x.to_vec(), 0.0)],
        targets: vec![targets.to_vec()],
        sigma_true: None,
        seed: None,
    }
}

/// Random small instance with `dNML <= 32`, optionally with
/// velocity-difference interactions.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    velocity_diff: bool,
) -> (ObservationSet<f64>, KernelHyperparams<f64>) {
    let d = rng.random_range(1..=2usize);
    let n = rng.random_range(2..=4usize);
    let m_count = rng.random_range(1..=2usize);
    let max_l = (32 / (d * n * m_count)).max(1).min(3);
    let l_count = rng.random_range(1..=max_l);
    let order = if velocity_diff { Order::Second } else { Order::First };
    let interaction = if velocity_diff {
        InteractionVariable::VelocityDifference
    } else {
        InteractionVariable::PositionDifference
    };
    let dim = d * n;
    let times: Vec<f64> = (0..l_count).map(|l| l as f64 * 0.5).collect();
    let mut states = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..m_count {
        for &t in &times {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v = match order {
                Order::First => None,
                Order::Second => {
                    Some((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>())
                }
            };
            states.push(State { x, v, t });
            targets.push((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        }
    }
    let obs = ObservationSet {
        d,
        n,
        order,
        interaction,
        m_count,
        l_count,
        times,
        states,
        targets,
        sigma_true: None,
        seed: None,
    };
    let nu = [MaternNu::Half, MaternNu::ThreeHalves, MaternNu::FiveHalves]
        [rng.random_range(0..3usize)];
    let h = KernelHyperparams::new(
        nu,
        rng.random_range(0.3..2.0),
        rng.random_range(0.3..2.0),
    )
    .unwrap();
    (obs, h)
}

fn pair_data<T: Scalar>(obs: &ObservationSet<T>, slot: usize, i: usize, k: usize) -> (T, Vec<T>) {
    let d = obs.d;
    let state = &obs.states[slot];
    let mut r2 = T::zero();
    for c in 0..d {
        let diff = state.x[k * d + c] - state.x[i * d + c];
        r2 += diff * diff;
    }
    let source: &[T] = match obs.interaction {
        InteractionVariable::PositionDifference => &state.x,
        InteractionVariable::VelocityDifference => state.v.as_ref().expect("second order"),
    };
    let u: Vec<T> = (0..d).map(|c| source[k * d + c] - source[i * d + c]).collect();
    (r2.sqrt(), u)
}

/// Quadruple-sum evaluation of the ff-covariance definition.
pub fn brute_force_ff_cov<T: Scalar>(
    obs: &ObservationSet<T>,
    h: &KernelHyperparams<T>,
) -> DMatrix<T> {
    let d = obs.d;
    let n = obs.n;
    let snapshots = obs.m_count * obs.l_count;
    let dim = d * n * snapshots;
    let inv_n2 = T::one() / crate::scalar::real::<T>((n * n) as f64);
    let mut out = DMatrix::zeros(dim, dim);
    for a in 0..snapshots {
        for i in 0..n {
            for b in 0..snapshots {
                for j in 0..n {
                    for k in 0..n {
                        if k == i {
                            continue;
                        }
                        let (r_ik, u_ik) = pair_data(obs, a, i, k);
                        for k2 in 0..n {
                            if k2 == j {
                                continue;
                            }
                            let (r_jk, u_jk) = pair_data(obs, b, j, k2);
                            let kernel = h.eval(r_ik, r_jk);
                            for c1 in 0..d {
                                for c2 in 0..d {
                                    out[((a * n + i) * d + c1, (b * n + j) * d + c2)] +=
                                        inv_n2 * kernel * u_ik[c1] * u_jk[c2];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Direct evaluation of the cross-covariance definition.
pub fn brute_force_cross_cov<T: Scalar>(
    obs: &ObservationSet<T>,
    h: &KernelHyperparams<T>,
    r_star: T,
) -> DVector<T> {
    let d = obs.d;
    let n = obs.n;
    let snapshots = obs.m_count * obs.l_count;
    let inv_n = T::one() / crate::scalar::real::<T>(n as f64);
    let mut out = DVector::zeros(d * n * snapshots);
    for a in 0..snapshots {
        for i in 0..n {
            for k in 0..n {
                if k == i {
                    continue;
                }
                let (r_ik, u_ik) = pair_data(obs, a, i, k);
                let kernel = h.eval(r_ik, r_star);
                for c in 0..d {
                    out[(a * n + i) * d + c] += inv_n * kernel * u_ik[c];
                }
            }
        }
    }
    out
}

/// Dense negative log marginal likelihood via LU: explicit inverse and
/// determinant, no Cholesky.
pub fn dense_lu_nll<T: Scalar>(cov: &DMatrix<T>, residual: &DVector<T>, sigma: T) -> T {
    let dim = cov.nrows();
    let mut a = cov.clone();
    for i in 0..dim {
        a[(i, i)] += sigma * sigma;
    }
    let lu = a.clone().lu();
    let det = lu.determinant();
    let inv = lu.try_inverse().expect("invertible in the oracle");
    let quad = (residual.transpose() * &inv * residual)[(0, 0)];
    let half = crate::scalar::real::<T>(0.5);
    let two_pi = crate::scalar::real::<T>(std::f64::consts::TAU);
    half * quad
        + half * det.ln()
        + crate::scalar::real::<T>(dim as f64) * half * two_pi.ln()
}
