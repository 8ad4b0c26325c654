//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! The objective returns value and gradient together; non-finite values are
//! expected (the trainer maps failed factorizations to `+inf`) and simply
//! make the line search back off.

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsConfig<T: Scalar> {
    /// Number of curvature pairs kept.
    pub memory: usize,
    /// Hard cap on objective evaluations.
    pub max_evals: usize,
    /// Convergence threshold on the gradient infinity norm.
    pub grad_tol: T,
    /// Armijo constant.
    pub c1: T,
    /// Curvature constant.
    pub c2: T,
    /// Evaluation budget of a single line search.
    pub max_line_evals: usize,
}

impl<T: Scalar> Default for LbfgsConfig<T> {
    fn default() -> Self {
        Self {
            memory: 10,
            max_evals: 600,
            grad_tol: real(1e-6),
            c1: real(1e-4),
            c2: real(0.9),
            max_line_evals: 25,
        }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep<T> {
    pub iteration: usize,
    pub value: T,
    pub grad_inf_norm: T,
    pub evals: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult<T: Scalar> {
    pub x: Vec<T>,
    pub value: T,
    pub grad: Vec<T>,
    pub evals: usize,
    pub iterations: usize,
    /// Gradient tolerance reached.
    pub converged: bool,
    /// Stopped because the evaluation budget ran out.
    pub budget_exhausted: bool,
    pub trace: Vec<TraceStep<T>>,
}

impl<T: Scalar> OptimizeResult<T> {
    pub fn grad_inf_norm(&self) -> T {
        inf_norm(&self.grad)
    }
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

/// Minimize `f` starting from `x0`. With `max_evals == 0` the initial point
/// is returned untouched with the budget flag set.
pub fn minimize<T, F>(mut f: F, x0: &[T], cfg: &LbfgsConfig<T>) -> Result<OptimizeResult<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    let dim = x0.len();
    if dim == 0 {
        return Err(Error::InvalidInput("cannot optimize over zero parameters".into()));
    }
    if cfg.max_evals == 0 {
        return Ok(OptimizeResult {
            x: x0.to_vec(),
            value: real(f64::INFINITY),
            grad: vec![T::zero(); dim],
            evals: 0,
            iterations: 0,
            converged: false,
            budget_exhausted: true,
            trace: Vec::new(),
        });
    }

    let mut evals = 0usize;
    let mut eval = |x: &[T], evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    let mut x = x0.to_vec();
    let (mut fx, mut gx) = eval(&x, &mut evals);
    if !fx.is_finite() {
        return Err(Error::Optimization(
            "objective is not finite at the initial point".into(),
        ));
    }

    let mut trace = vec![TraceStep { iteration: 0, value: fx, grad_inf_norm: inf_norm(&gx), evals }];
    let mut pairs: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::new(); // (s, y, 1/s'y)
    let mut iteration = 0usize;
    let mut budget_exhausted = false;
    let mut converged = inf_norm(&gx) <= cfg.grad_tol;

    while !converged && !budget_exhausted {
        iteration += 1;
        let mut direction = two_loop(&pairs, &gx);
        let mut dg: T = direction.iter().zip(&gx).map(|(d, g)| *d * *g).sum();
        if !(dg < T::zero()) {
            // not a descent direction; fall back to steepest descent
            pairs.clear();
            direction = gx.iter().map(|g| -*g).collect();
            dg = -gx.iter().map(|g| *g * *g).sum::<T>();
            if !(dg < T::zero()) {
                break;
            }
        }

        let search = wolfe_search(
            &mut eval,
            &mut evals,
            cfg,
            &x,
            fx,
            &gx,
            &direction,
            dg,
        );
        match search {
            LineSearchOutcome::Accepted { step, value, grad } | LineSearchOutcome::Partial { step, value, grad } => {
                let x_new: Vec<T> =
                    x.iter().zip(&direction).map(|(xi, di)| *xi + step * *di).collect();
                let s: Vec<T> = x_new.iter().zip(&x).map(|(a, b)| *a - *b).collect();
                let y: Vec<T> = grad.iter().zip(&gx).map(|(a, b)| *a - *b).collect();
                let sy: T = s.iter().zip(&y).map(|(a, b)| *a * *b).sum();
                let ss: T = s.iter().map(|a| *a * *a).sum();
                let yy: T = y.iter().map(|a| *a * *a).sum();
                if sy > real::<T>(1e-10) * (ss * yy).sqrt() {
                    if pairs.len() == cfg.memory {
                        pairs.pop_front();
                    }
                    let rho = T::one() / sy;
                    pairs.push_back((s, y, rho));
                }
                x = x_new;
                fx = value;
                gx = grad;
                trace.push(TraceStep {
                    iteration,
                    value: fx,
                    grad_inf_norm: inf_norm(&gx),
                    evals,
                });
                converged = inf_norm(&gx) <= cfg.grad_tol;
            }
            LineSearchOutcome::Failed => break,
            LineSearchOutcome::OutOfBudget => {
                budget_exhausted = true;
            }
        }
        if evals >= cfg.max_evals {
            budget_exhausted = true;
        }
    }

    Ok(OptimizeResult {
        x,
        value: fx,
        grad: gx,
        evals,
        iterations: iteration,
        converged,
        budget_exhausted,
        trace,
    })
}

fn two_loop<T: Scalar>(pairs: &VecDeque<(Vec<T>, Vec<T>, T)>, grad: &[T]) -> Vec<T> {
    let mut q: Vec<T> = grad.iter().map(|g| -*g).collect();
    if pairs.is_empty() {
        return q;
    }
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let alpha = *rho * s.iter().zip(&q).map(|(a, b)| *a * *b).sum::<T>();
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alpha * *yi;
        }
        alphas.push(alpha);
    }
    // initial Hessian scaling from the newest pair
    let (s_last, y_last, _) = pairs.back().expect("nonempty");
    let sy: T = s_last.iter().zip(y_last).map(|(a, b)| *a * *b).sum();
    let yy: T = y_last.iter().map(|a| *a * *a).sum();
    if yy > T::zero() {
        let scale = sy / yy;
        for qi in q.iter_mut() {
            *qi *= scale;
        }
    }
    for ((s, y, rho), alpha) in pairs.iter().zip(alphas.iter().rev()) {
        let beta = *rho * y.iter().zip(&q).map(|(a, b)| *a * *b).sum::<T>();
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (*alpha - beta) * *si;
        }
    }
    q
}

enum LineSearchOutcome<T> {
    /// Strong Wolfe point.
    Accepted { step: T, value: T, grad: Vec<T> },
    /// No Wolfe point found, but a decrease was; take it to stay monotone.
    Partial { step: T, value: T, grad: Vec<T> },
    Failed,
    OutOfBudget,
}

#[allow(clippy::too_many_arguments)]
fn wolfe_search<T, F>(
    eval: &mut F,
    evals: &mut usize,
    cfg: &LbfgsConfig<T>,
    x: &[T],
    f0: T,
    _g0: &[T],
    direction: &[T],
    dg0: T,
) -> LineSearchOutcome<T>
where
    T: Scalar,
    F: FnMut(&[T], &mut usize) -> (T, Vec<T>),
{
    let probe = |step: T, evals: &mut usize, eval: &mut F| {
        let xt: Vec<T> = x.iter().zip(direction).map(|(xi, di)| *xi + step * *di).collect();
        let (value, grad) = eval(&xt, evals);
        let slope: T = grad.iter().zip(direction).map(|(g, d)| *g * *d).sum();
        (value, grad, slope)
    };

    let mut best: Option<(T, T, Vec<T>)> = None;
    let mut local_evals = 0usize;
    let mut step = T::one();
    let mut step_prev = T::zero();
    let mut f_prev = f0;
    let max_step = real::<T>(1e4);

    // bracketing phase
    let mut bracket: Option<(T, T, T, T)> = None; // (lo, f_lo, hi, f_hi)
    for iter in 0..cfg.max_line_evals {
        if *evals >= cfg.max_evals {
            return finish_budget(best);
        }
        local_evals += 1;
        let (f_step, g_step, slope) = probe(step, evals, eval);
        if f_step.is_finite() && f_step < best.as_ref().map_or(f0, |b| b.1) {
            best = Some((step, f_step, g_step.clone()));
        }
        if !f_step.is_finite() || f_step > f0 + cfg.c1 * step * dg0 || (iter > 0 && f_step >= f_prev)
        {
            bracket = Some((step_prev, f_prev, step, f_step));
            break;
        }
        if slope.abs() <= -cfg.c2 * dg0 {
            return LineSearchOutcome::Accepted { step, value: f_step, grad: g_step };
        }
        if slope >= T::zero() {
            bracket = Some((step, f_step, step_prev, f_prev));
            break;
        }
        step_prev = step;
        f_prev = f_step;
        step = (step * real(2.0)).min(max_step);
        if local_evals >= cfg.max_line_evals {
            break;
        }
    }

    // zoom phase: bisection on the bracket
    if let Some((mut lo, mut f_lo, mut hi, _f_hi)) = bracket {
        for _ in 0..cfg.max_line_evals.saturating_sub(local_evals) {
            if *evals >= cfg.max_evals {
                return finish_budget(best);
            }
            let mid = (lo + hi) * real(0.5);
            if (hi - lo).abs() <= real::<T>(1e-14) * lo.abs().max(T::one()) {
                break;
            }
            let (f_mid, g_mid, slope) = probe(mid, evals, eval);
            if f_mid.is_finite() && f_mid < best.as_ref().map_or(f0, |b| b.1) {
                best = Some((mid, f_mid, g_mid.clone()));
            }
            if !f_mid.is_finite() || f_mid > f0 + cfg.c1 * mid * dg0 || f_mid >= f_lo {
                hi = mid;
            } else {
                if slope.abs() <= -cfg.c2 * dg0 {
                    return LineSearchOutcome::Accepted { step: mid, value: f_mid, grad: g_mid };
                }
                if slope * (hi - lo) >= T::zero() {
                    hi = lo;
                }
                lo = mid;
                f_lo = f_mid;
            }
        }
    }

    match best {
        Some((step, value, grad)) => LineSearchOutcome::Partial { step, value, grad },
        None => LineSearchOutcome::Failed,
    }
}

fn finish_budget<T: Scalar>(best: Option<(T, T, Vec<T>)>) -> LineSearchOutcome<T> {
    match best {
        Some((step, value, grad)) => LineSearchOutcome::Partial { step, value, grad },
        None => LineSearchOutcome::OutOfBudget,
    }
}
