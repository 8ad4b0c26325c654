//! Adaptive Dormand-Prince 5(4) integration with output exactly at the
//! requested grid times.
//!
//! Steps are clamped so every grid time is hit by an actual step, which
//! keeps the sampled states deterministic and free of interpolation error.

use super::{rhs_into, Order, ParticleSystemSpec, State};
use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

pub const DEFAULT_RTOL: f64 = 1e-5;
pub const DEFAULT_ATOL: f64 = 1e-6;

const MAX_STEPS: usize = 4_000_000;
const SAFETY: f64 = 0.9;
const MIN_SHRINK: f64 = 0.2;
const MAX_GROW: f64 = 5.0;

/// Integrate a generic ODE `y' = f(t, y)` and return the solution at each
/// grid time. `t_grid` must be strictly increasing and start at `t0` or
/// later.
pub fn integrate_ode<T, F>(
    mut f: F,
    t0: T,
    y0: &[T],
    t_grid: &[T],
    rtol: T,
    atol: T,
) -> Result<Vec<Vec<T>>>
where
    T: Scalar,
    F: FnMut(T, &[T], &mut [T]) -> Result<()>,
{
    if t_grid.is_empty() {
        return Err(Error::InvalidInput("empty output grid".into()));
    }
    if t_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("output grid must be strictly increasing".into()));
    }
    if !(t_grid[0] >= t0) {
        return Err(Error::InvalidInput("output grid starts before the initial time".into()));
    }
    if !(rtol > T::zero()) || !(atol > T::zero()) {
        return Err(Error::InvalidInput("tolerances must be positive".into()));
    }

    let dim = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut out = Vec::with_capacity(t_grid.len());
    let mut grid_iter = t_grid.iter().copied().peekable();

    // k1 is reused from the previous step's last stage (FSAL).
    let mut k: Vec<Vec<T>> = (0..7).map(|_| vec![T::zero(); dim]).collect();
    f(t, &y, &mut k[0])?;

    let total_span = t_grid[t_grid.len() - 1] - t0;
    let mut h = initial_step(total_span, rtol);
    let mut y_trial = vec![T::zero(); dim];
    let mut y_stage = vec![T::zero(); dim];
    let mut steps = 0usize;

    while let Some(&t_next) = grid_iter.peek() {
        if t_next == t {
            out.push(y.clone());
            grid_iter.next();
            continue;
        }
        let mut h_step = h.min(t_next - t);
        loop {
            steps += 1;
            if steps > MAX_STEPS || !(h_step > T::zero()) || t + h_step == t {
                return Err(Error::IntegrationFailure {
                    last_good_time: crate::scalar::double(t),
                    trajectory: None,
                    reason: if steps > MAX_STEPS {
                        format!("step budget of {MAX_STEPS} exhausted")
                    } else {
                        "step size underflow".into()
                    },
                });
            }
            match dp_step(&mut f, t, &y, h_step, &mut k, &mut y_trial, &mut y_stage, rtol, atol)? {
                StepOutcome::Accept { error } => {
                    t += h_step;
                    y.copy_from_slice(&y_trial);
                    k.swap(0, 6); // FSAL
                    h = h_step * grow_factor(error);
                    break;
                }
                StepOutcome::Reject { error } => {
                    h_step *= shrink_factor(error);
                }
            }
        }
        h = h.min(total_span);
    }
    Ok(out)
}

/// Integrate the particle system from `initial`, sampling at `t_grid`.
pub fn integrate<T: Scalar>(
    spec: &ParticleSystemSpec<T>,
    initial: &State<T>,
    t_grid: &[T],
    rtol: T,
    atol: T,
) -> Result<Vec<State<T>>> {
    // dimension checks as in `rhs`
    super::rhs(spec, initial)?;
    let dim = spec.state_dim();
    let y0 = pack_state(spec.order, initial);
    let f = |t: T, y: &[T], dy: &mut [T]| derivative(spec, t, y, dy);
    let rows = integrate_ode(f, initial.t, &y0, t_grid, rtol, atol)?;
    Ok(rows
        .into_iter()
        .zip(t_grid)
        .map(|(row, &t)| match spec.order {
            Order::First => State::first_order(row, t),
            Order::Second => {
                State::second_order(row[..dim].to_vec(), row[dim..].to_vec(), t)
            }
        })
        .collect())
}

fn derivative<T: Scalar>(
    spec: &ParticleSystemSpec<T>,
    _t: T,
    y: &[T],
    dy: &mut [T],
) -> Result<()> {
    let dim = spec.state_dim();
    match spec.order {
        Order::First => rhs_into(spec, y, None, dy),
        Order::Second => {
            let (x, v) = y.split_at(dim);
            let (dx, dv) = dy.split_at_mut(dim);
            dx.copy_from_slice(v);
            rhs_into(spec, x, Some(v), dv)
        }
    }
}

fn pack_state<T: Scalar>(order: Order, state: &State<T>) -> Vec<T> {
    match order {
        Order::First => state.x.clone(),
        Order::Second => {
            let mut y = state.x.clone();
            y.extend_from_slice(state.v.as_ref().expect("validated"));
            y
        }
    }
}

enum StepOutcome<T> {
    Accept { error: T },
    Reject { error: T },
}

#[allow(clippy::too_many_arguments)]
fn dp_step<T, F>(
    f: &mut F,
    t: T,
    y: &[T],
    h: T,
    k: &mut [Vec<T>],
    y_trial: &mut [T],
    y_stage: &mut [T],
    rtol: T,
    atol: T,
) -> Result<StepOutcome<T>>
where
    T: Scalar,
    F: FnMut(T, &[T], &mut [T]) -> Result<()>,
{
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    // fifth-order weights minus fourth-order weights
    const E: [f64; 7] = [
        35.0 / 384.0 - 5179.0 / 57600.0,
        0.0,
        500.0 / 1113.0 - 7571.0 / 16695.0,
        125.0 / 192.0 - 393.0 / 640.0,
        -2187.0 / 6784.0 + 92097.0 / 339200.0,
        11.0 / 84.0 - 187.0 / 2100.0,
        -1.0 / 40.0,
    ];

    let dim = y.len();
    for stage in 0..6 {
        for i in 0..dim {
            let mut acc = T::zero();
            for (j, &a) in A[stage].iter().enumerate().take(stage + 1) {
                if a != 0.0 {
                    acc += real::<T>(a) * k[j][i];
                }
            }
            y_stage[i] = y[i] + h * acc;
        }
        let (head, tail) = k.split_at_mut(stage + 1);
        let _ = head;
        f(t + real::<T>(C[stage]) * h, y_stage, &mut tail[0])?;
    }
    // stage 6 used the fifth-order weights, so y_stage is the new solution
    y_trial.copy_from_slice(y_stage);

    let mut err_acc = T::zero();
    for i in 0..dim {
        let mut e = T::zero();
        for (j, &w) in E.iter().enumerate() {
            if w != 0.0 {
                e += real::<T>(w) * k[j][i];
            }
        }
        e *= h;
        let scale = atol + rtol * y[i].abs().max(y_trial[i].abs());
        let ratio = e / scale;
        err_acc += ratio * ratio;
    }
    let error = (err_acc / real::<T>(dim as f64)).sqrt();
    if !error.is_finite() {
        return Ok(StepOutcome::Reject { error: real(1e6) });
    }
    if error <= T::one() {
        Ok(StepOutcome::Accept { error })
    } else {
        Ok(StepOutcome::Reject { error })
    }
}

fn initial_step<T: Scalar>(span: T, rtol: T) -> T {
    (span * real(1e-3)).max(rtol * span * real(0.1)).min(span)
}

fn grow_factor<T: Scalar>(error: T) -> T {
    let exponent = real::<T>(-0.2);
    let raw = if error > T::zero() {
        real::<T>(SAFETY) * error.powf(exponent)
    } else {
        real(MAX_GROW)
    };
    raw.clamp(real(MIN_SHRINK), real(MAX_GROW))
}

fn shrink_factor<T: Scalar>(error: T) -> T {
    grow_factor(error).min(real(0.9))
}
