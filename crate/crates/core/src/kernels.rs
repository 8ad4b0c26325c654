//! Scalar Matern kernels on distances, with analytic hyperparameter
//! derivatives.
//!
//! Only half-integer smoothness is supported; those orders have closed
//! forms, so no Bessel evaluations are needed:
//!
//! ```text
//! nu = 1/2 : K = s^2 e^{-t}
//! nu = 3/2 : K = s^2 (1 + t) e^{-t}
//! nu = 5/2 : K = s^2 (1 + t + t^2/3) e^{-t}      t = sqrt(2 nu) |r - r'| / omega
//! ```

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use serde::{Deserialize, Serialize};

/// Half-integer Matern smoothness order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum MaternNu {
    #[serde(rename = "1/2")]
    Half,
    #[default]
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[serde(rename = "5/2")]
    FiveHalves,
}

impl MaternNu {
    /// `2 nu` as a scalar, the factor under the square root in `t`.
    fn two_nu<T: Scalar>(self) -> T {
        match self {
            MaternNu::Half => real::<T>(1.0),
            MaternNu::ThreeHalves => real::<T>(3.0),
            MaternNu::FiveHalves => real::<T>(5.0),
        }
    }
}

/// Matern hyperparameters. Amplitude and length-scale are stored as logs so
/// the trainer can move in an unconstrained space; serialization uses
/// natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelHyperparamsRepr<T>", into = "KernelHyperparamsRepr<T>")]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct KernelHyperparams<T: Scalar> {
    nu: MaternNu,
    log_s: T,
    log_omega: T,
}

#[derive(Serialize, Deserialize)]
struct KernelHyperparamsRepr<T> {
    nu: MaternNu,
    s: T,
    omega: T,
}

impl<T: Scalar> From<KernelHyperparams<T>> for KernelHyperparamsRepr<T> {
    fn from(h: KernelHyperparams<T>) -> Self {
        KernelHyperparamsRepr { nu: h.nu, s: h.s(), omega: h.omega() }
    }
}

impl<T: Scalar + serde::de::DeserializeOwned> TryFrom<KernelHyperparamsRepr<T>>
    for KernelHyperparams<T>
{
    type Error = Error;
    fn try_from(r: KernelHyperparamsRepr<T>) -> Result<Self> {
        KernelHyperparams::new(r.nu, r.s, r.omega)
    }
}

impl<T: Scalar> KernelHyperparams<T> {
    pub fn new(nu: MaternNu, s: T, omega: T) -> Result<Self> {
        if !(s > T::zero()) || !(omega > T::zero()) {
            return Err(Error::InvalidInput(format!(
                "kernel amplitude and length-scale must be positive, got s = {s}, omega = {omega}"
            )));
        }
        Ok(Self { nu, log_s: s.ln(), log_omega: omega.ln() })
    }

    /// Default smoothness (3/2), unit amplitude and length-scale.
    pub fn standard() -> Self {
        Self { nu: MaternNu::ThreeHalves, log_s: T::zero(), log_omega: T::zero() }
    }

    pub fn from_logs(nu: MaternNu, log_s: T, log_omega: T) -> Self {
        Self { nu, log_s, log_omega }
    }

    pub fn nu(&self) -> MaternNu {
        self.nu
    }

    pub fn s(&self) -> T {
        self.log_s.exp()
    }

    pub fn omega(&self) -> T {
        self.log_omega.exp()
    }

    pub fn log_s(&self) -> T {
        self.log_s
    }

    pub fn log_omega(&self) -> T {
        self.log_omega
    }

    /// Evaluate `K(r, r')`. Stationary: depends on `|r - r'|` only.
    pub fn eval(&self, r: T, r_prime: T) -> T {
        let s2 = (self.log_s * real::<T>(2.0)).exp();
        let t = self.scaled_lag(r, r_prime);
        s2 * self.shape(t)
    }

    /// Partials in the log parameterization: `(dK/d log s, dK/d log omega)`.
    pub fn grad_hyper(&self, r: T, r_prime: T) -> (T, T) {
        let s2 = (self.log_s * real::<T>(2.0)).exp();
        let t = self.scaled_lag(r, r_prime);
        let d_log_s = real::<T>(2.0) * s2 * self.shape(t);
        // d/d log omega = -t dK/dt, closed form per order
        let third = real::<T>(1.0 / 3.0);
        let d_log_omega = match self.nu {
            MaternNu::Half => s2 * t * (-t).exp(),
            MaternNu::ThreeHalves => s2 * t * t * (-t).exp(),
            MaternNu::FiveHalves => s2 * t * t * third * (T::one() + t) * (-t).exp(),
        };
        (d_log_s, d_log_omega)
    }

    /// Evaluate kernel and both log-partials sharing one `exp` call.
    pub fn eval_with_grad(&self, r: T, r_prime: T) -> (T, T, T) {
        let s2 = (self.log_s * real::<T>(2.0)).exp();
        let t = self.scaled_lag(r, r_prime);
        let e = (-t).exp();
        let third = real::<T>(1.0 / 3.0);
        let (shape, dw) = match self.nu {
            MaternNu::Half => (e, t * e),
            MaternNu::ThreeHalves => ((T::one() + t) * e, t * t * e),
            MaternNu::FiveHalves => (
                (T::one() + t + t * t * third) * e,
                t * t * third * (T::one() + t) * e,
            ),
        };
        let k = s2 * shape;
        (k, real::<T>(2.0) * k, s2 * dw)
    }

    fn scaled_lag(&self, r: T, r_prime: T) -> T {
        let lag = (r - r_prime).abs();
        self.nu.two_nu::<T>().sqrt() * lag / self.log_omega.exp()
    }

    fn shape(&self, t: T) -> T {
        let e = (-t).exp();
        match self.nu {
            MaternNu::Half => e,
            MaternNu::ThreeHalves => (T::one() + t) * e,
            MaternNu::FiveHalves => (T::one() + t + t * t * real::<T>(1.0 / 3.0)) * e,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn h64(nu: MaternNu, s: f64, omega: f64) -> KernelHyperparams<f64> {
        KernelHyperparams::new(nu, s, omega).unwrap()
    }

    #[test]
    fn diagonal_is_amplitude_squared() {
        let h = h64(MaternNu::ThreeHalves, 2.0, 0.7);
        assert_relative_eq!(h.eval(0.3, 0.3), 4.0, max_relative = 1e-15);
        assert_relative_eq!(h.eval(5.0, 5.0), 4.0, max_relative = 1e-15);
    }

    #[test]
    fn matern_three_halves_closed_form() {
        // (1 + sqrt 3) e^{-sqrt 3} at unit lag, unit scale
        let h = h64(MaternNu::ThreeHalves, 1.0, 1.0);
        let expected = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
        assert_relative_eq!(h.eval(0.0, 1.0), expected, max_relative = 1e-14);
        assert_relative_eq!(expected, 0.483356, max_relative = 1e-5);
    }

    #[test]
    fn matern_half_is_exponential() {
        let h = h64(MaternNu::Half, 1.0, 1.0);
        assert_relative_eq!(h.eval(2f64.ln(), 0.0), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn grad_at_zero_lag() {
        let h = h64(MaternNu::ThreeHalves, 3.0, 0.4);
        let (ds, dw) = h.grad_hyper(1.1, 1.1);
        assert_relative_eq!(ds, 2.0 * 9.0, max_relative = 1e-14);
        assert_eq!(dw, 0.0);
    }

    #[test]
    fn grad_log_omega_closed_form() {
        // d/d log omega of (1 + sqrt3 u) e^{-sqrt3 u} at u = 1 is 3 e^{-sqrt3}
        let h = h64(MaternNu::ThreeHalves, 1.0, 1.0);
        let (_, dw) = h.grad_hyper(0.0, 1.0);
        assert_relative_eq!(dw, 3.0 * (-(3f64.sqrt())).exp(), max_relative = 1e-14);
        assert_relative_eq!(dw, 0.530764, max_relative = 1e-5);
    }

    fn finite_diff_grad(nu: MaternNu, log_s: f64, log_omega: f64, r: f64, rp: f64) -> (f64, f64) {
        let step = 1e-6;
        let at = |ls: f64, lw: f64| {
            KernelHyperparams::from_logs(nu, ls, lw).eval(r, rp)
        };
        (
            (at(log_s + step, log_omega) - at(log_s - step, log_omega)) / (2.0 * step),
            (at(log_s, log_omega + step) - at(log_s, log_omega - step)) / (2.0 * step),
        )
    }

    #[test]
    fn grad_matches_finite_differences_rel_1e7() {
        for (nu, ls, lw, r, rp) in [
            (MaternNu::Half, 0.3, -0.2, 0.9, 0.1),
            (MaternNu::ThreeHalves, -0.5, 0.4, 2.0, 0.6),
            (MaternNu::FiveHalves, 0.1, 0.0, 0.0, 1.3),
        ] {
            let h = KernelHyperparams::from_logs(nu, ls, lw);
            let (gs, gw) = h.grad_hyper(r, rp);
            let (fs, fw) = finite_diff_grad(nu, ls, lw, r, rp);
            assert_relative_eq!(gs, fs, max_relative = 1e-7);
            assert_relative_eq!(gw, fw, max_relative = 1e-7);
        }
    }

    #[test]
    fn serde_natural_units() {
        let h = h64(MaternNu::ThreeHalves, 2.0, 0.5);
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(json, r#"{"nu":"3/2","s":2.0,"omega":0.5}"#);
        let back: KernelHyperparams<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);
        assert!(serde_json::from_str::<KernelHyperparams<f64>>(
            r#"{"nu":"3/2","s":-1.0,"omega":0.5}"#
        )
        .is_err());
    }

    #[test]
    fn gram_matrices_are_psd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for trial in 0..50 {
            let n = 2 + (trial % 19);
            let nu = [MaternNu::Half, MaternNu::ThreeHalves, MaternNu::FiveHalves][trial % 3];
            let s: f64 = rng.random_range(0.2..3.0);
            let omega: f64 = rng.random_range(0.1..2.0);
            let h = h64(nu, s, omega);
            let pts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
            let gram = nalgebra::DMatrix::from_fn(n, n, |i, j| h.eval(pts[i], pts[j]));
            let min_eig = gram
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(
                min_eig >= -1e-10 * s * s,
                "trial {trial}: min eigenvalue {min_eig} too negative"
            );
        }
    }

    proptest! {
        #[test]
        fn symmetry_and_stationarity(
            r in 0.0..10.0f64,
            rp in 0.0..10.0f64,
            shift in 0.0..5.0f64,
            s in 0.1..4.0f64,
            omega in 0.05..3.0f64,
        ) {
            let h = h64(MaternNu::ThreeHalves, s, omega);
            prop_assert_eq!(h.eval(r, rp), h.eval(rp, r));
            let shifted = h.eval(r + shift, rp + shift);
            prop_assert!((h.eval(r, rp) - shifted).abs() <= 1e-12 * s * s);
        }

        #[test]
        fn grad_matches_fd_randomized(
            r in 0.0..6.0f64,
            rp in 0.0..6.0f64,
            ls in -1.0..1.0f64,
            lw in -1.0..1.0f64,
        ) {
            let h = KernelHyperparams::from_logs(MaternNu::ThreeHalves, ls, lw);
            let (gs, gw) = h.grad_hyper(r, rp);
            let (fs, fw) = finite_diff_grad(MaternNu::ThreeHalves, ls, lw, r, rp);
            prop_assert!((gs - fs).abs() <= 1e-6 * gs.abs().max(1e-3));
            prop_assert!((gw - fw).abs() <= 1e-6 * gw.abs().max(1e-3));
        }
    }
}
