//! Closed-form interaction kernels used to generate synthetic data, plus a
//! table-backed kernel for running a learned estimate inside the integrator.

use crate::error::{Error, Result};
use crate::interp::InterpTable;
use crate::scalar::{real, Scalar};
use serde::{Deserialize, Serialize};

/// A scalar interaction kernel `r -> phi(r)` on `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub enum InteractionKernel<T: Scalar> {
    /// `phi == 0`.
    Zero,
    /// `phi == c`.
    Constant { value: T },
    /// Piecewise-linear opinion kernel: `2.5 r` on `[0, 0.4)`, `1` on
    /// `[0.4, 0.6)`, `2.5 - 2.5 r` on `[0.6, 1)`, `0` beyond.
    PiecewiseOpinion,
    /// Morse-type kernel with a smooth short-range truncation.
    Morse(MorseKernel<T>),
    /// `phi(r) = scale / (1 + r^2)^power`, the classic alignment kernel.
    PowerLaw { scale: T, power: T },
    /// Finite kernel expansion `phi(r) = sum_j w_j K(c_j, r)` with a unit-
    /// amplitude Matern factor; exactly the functions the GP prior spans.
    RkhsSpan {
        nu: crate::kernels::MaternNu,
        omega: T,
        centers: Vec<T>,
        weights: Vec<T>,
    },
    /// Interpolated table, clamped outside its grid.
    Table(InterpTable<T>),
}

impl<T: Scalar> InteractionKernel<T> {
    pub fn eval(&self, r: T) -> T {
        match self {
            InteractionKernel::Zero => T::zero(),
            InteractionKernel::Constant { value } => *value,
            InteractionKernel::PiecewiseOpinion => {
                if r < real(0.4) {
                    real::<T>(2.5) * r
                } else if r < real(0.6) {
                    T::one()
                } else if r < real(1.0) {
                    real::<T>(2.5) - real::<T>(2.5) * r
                } else {
                    T::zero()
                }
            }
            InteractionKernel::Morse(m) => m.eval(r),
            InteractionKernel::PowerLaw { scale, power } => {
                *scale / (T::one() + r * r).powf(*power)
            }
            InteractionKernel::RkhsSpan { nu, omega, centers, weights } => {
                let h = crate::kernels::KernelHyperparams::from_logs(*nu, T::zero(), omega.ln());
                centers
                    .iter()
                    .zip(weights)
                    .map(|(c, w)| *w * h.eval(*c, r))
                    .sum()
            }
            InteractionKernel::Table(table) => table.eval(r),
        }
    }
}

/// Kernel derived from a Morse-type potential,
/// `phi(r) = (1/r) [ -(cr/lr) e^{-r/lr} + (ca/la) e^{-r/la} ]`,
/// which is singular at zero.  Below `r0` it is replaced by `a e^{-b r}`
/// with `a`, `b` solved from matching value and first derivative at `r0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MorseRepr<T>", into = "MorseRepr<T>")]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct MorseKernel<T: Scalar> {
    c_rep: T,
    l_rep: T,
    c_att: T,
    l_att: T,
    r0: T,
    trunc_a: T,
    trunc_b: T,
}

#[derive(Serialize, Deserialize)]
struct MorseRepr<T> {
    c_rep: T,
    l_rep: T,
    c_att: T,
    l_att: T,
    r0: T,
}

impl<T: Scalar> From<MorseKernel<T>> for MorseRepr<T> {
    fn from(m: MorseKernel<T>) -> Self {
        MorseRepr { c_rep: m.c_rep, l_rep: m.l_rep, c_att: m.c_att, l_att: m.l_att, r0: m.r0 }
    }
}

impl<T: Scalar + serde::de::DeserializeOwned> TryFrom<MorseRepr<T>> for MorseKernel<T> {
    type Error = Error;
    fn try_from(r: MorseRepr<T>) -> Result<Self> {
        MorseKernel::new(r.c_rep, r.l_rep, r.c_att, r.l_att, r.r0)
    }
}

impl<T: Scalar> MorseKernel<T> {
    pub fn new(c_rep: T, l_rep: T, c_att: T, l_att: T, r0: T) -> Result<Self> {
        if !(l_rep > T::zero()) || !(l_att > T::zero()) || !(r0 > T::zero()) {
            return Err(Error::InvalidInput(
                "Morse ranges and truncation radius must be positive".into(),
            ));
        }
        let raw = |r: T| {
            (-(c_rep / l_rep) * (-r / l_rep).exp() + (c_att / l_att) * (-r / l_att).exp()) / r
        };
        let raw_deriv = |r: T| {
            let g = -(c_rep / l_rep) * (-r / l_rep).exp() + (c_att / l_att) * (-r / l_att).exp();
            let g_prime = (c_rep / (l_rep * l_rep)) * (-r / l_rep).exp()
                - (c_att / (l_att * l_att)) * (-r / l_att).exp();
            g_prime / r - g / (r * r)
        };
        let value = raw(r0);
        if value == T::zero() || !value.is_finite() {
            return Err(Error::InvalidInput(format!(
                "C1 truncation needs a nonzero finite kernel value at r0, got {value}"
            )));
        }
        let trunc_b = -raw_deriv(r0) / value;
        let trunc_a = value * (trunc_b * r0).exp();
        Ok(Self { c_rep, l_rep, c_att, l_att, r0, trunc_a, trunc_b })
    }

    pub fn eval(&self, r: T) -> T {
        if r < self.r0 {
            self.trunc_a * (-self.trunc_b * r).exp()
        } else {
            (-(self.c_rep / self.l_rep) * (-r / self.l_rep).exp()
                + (self.c_att / self.l_att) * (-r / self.l_att).exp())
                / r
        }
    }
}
