//! Monotone cubic (PCHIP) interpolation on a fixed grid.
//!
//! Used to turn a posterior mean curve into a cheap kernel evaluator for
//! trajectory prediction. Shape preservation matters more than smoothness
//! here: a plain cubic spline can overshoot between grid points and inject
//! spurious attraction/repulsion into the predicted dynamics.

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use serde::{Deserialize, Serialize};

/// Tabulated function with Fritsch-Carlson monotone cubic evaluation.
/// Outside the grid the endpoint values are held constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InterpRepr<T>", into = "InterpRepr<T>")]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct InterpTable<T: Scalar> {
    xs: Vec<T>,
    ys: Vec<T>,
    slopes: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct InterpRepr<T> {
    xs: Vec<T>,
    ys: Vec<T>,
}

impl<T: Scalar> From<InterpTable<T>> for InterpRepr<T> {
    fn from(t: InterpTable<T>) -> Self {
        InterpRepr { xs: t.xs, ys: t.ys }
    }
}

impl<T: Scalar + serde::de::DeserializeOwned> TryFrom<InterpRepr<T>> for InterpTable<T> {
    type Error = Error;
    fn try_from(r: InterpRepr<T>) -> Result<Self> {
        InterpTable::new(r.xs, r.ys)
    }
}

impl<T: Scalar> InterpTable<T> {
    pub fn new(xs: Vec<T>, ys: Vec<T>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::InvalidInput(
                "interpolation table needs equally many nodes and values".into(),
            ));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "interpolation nodes must be strictly increasing".into(),
            ));
        }
        let slopes = pchip_slopes(&xs, &ys);
        Ok(Self { xs, ys, slopes })
    }

    pub fn xs(&self) -> &[T] {
        &self.xs
    }

    pub fn ys(&self) -> &[T] {
        &self.ys
    }

    pub fn eval(&self, x: T) -> T {
        let n = self.xs.len();
        if n == 1 || x <= self.xs[0] {
            return if x <= self.xs[0] { self.ys[0] } else { self.ys[n - 1] };
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        // rightmost interval with xs[k] <= x
        let k = match self.xs.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(idx) => return self.ys[idx],
            Err(idx) => idx - 1,
        };
        let h = self.xs[k + 1] - self.xs[k];
        let s = (x - self.xs[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let two = real::<T>(2.0);
        let three = real::<T>(3.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        h00 * self.ys[k]
            + h10 * h * self.slopes[k]
            + h01 * self.ys[k + 1]
            + h11 * h * self.slopes[k + 1]
    }
}

fn pchip_slopes<T: Scalar>(xs: &[T], ys: &[T]) -> Vec<T> {
    let n = xs.len();
    if n == 1 {
        return vec![T::zero()];
    }
    let h: Vec<T> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<T> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut d = vec![T::zero(); n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > T::zero() {
            let w1 = real::<T>(2.0) * h[k] + h[k - 1];
            let w2 = h[k] + real::<T>(2.0) * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    d[0] = endpoint_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = endpoint_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

// Three-point endpoint rule with the usual sign clamps.
fn endpoint_slope<T: Scalar>(h0: T, h1: T, d0: T, d1: T) -> T {
    let three = real::<T>(3.0);
    let mut s = ((real::<T>(2.0) * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s * d0 <= T::zero() {
        s = T::zero();
    } else if d0 * d1 < T::zero() && s.abs() > three * d0.abs() {
        s = three * d0;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reproduces_nodes_and_clamps() {
        let t = InterpTable::new(vec![0.0, 1.0, 2.0], vec![1.0, -1.0, 0.5]).unwrap();
        assert_eq!(t.eval(0.0), 1.0);
        assert_eq!(t.eval(1.0), -1.0);
        assert_eq!(t.eval(2.0), 0.5);
        assert_eq!(t.eval(-5.0), 1.0);
        assert_eq!(t.eval(9.0), 0.5);
    }

    #[test]
    fn linear_data_is_reproduced_exactly() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let t = InterpTable::new(xs, ys).unwrap();
        for i in 0..100 {
            let x = i as f64 * 0.055;
            assert_relative_eq!(t.eval(x), 2.0 * x - 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn monotone_data_gives_monotone_interpolant() {
        let xs = vec![0.0, 0.1, 0.5, 0.6, 2.0];
        let ys = vec![0.0, 0.01, 0.02, 1.5, 1.6];
        let t = InterpTable::new(xs, ys).unwrap();
        let mut prev = t.eval(0.0);
        for i in 1..=400 {
            let x = i as f64 * 0.005;
            let y = t.eval(x);
            assert!(y >= prev - 1e-12, "not monotone at x = {x}");
            prev = y;
        }
    }

    #[test]
    fn rejects_unsorted_nodes() {
        assert!(InterpTable::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(InterpTable::<f64>::new(vec![], vec![]).is_err());
    }
}
