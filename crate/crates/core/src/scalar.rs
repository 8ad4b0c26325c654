//! Scalar abstraction for the numeric core.
//!
//! All math in this crate is written against [`Scalar`], a real field with
//! the conversions and formatting the library needs. `f64` is the working
//! type everywhere that matters; `f32` instantiates too and is covered by a
//! smoke test.

use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar type the core math is generic over.
pub trait Scalar:
    nalgebra::RealField
    + Copy
    + Default
    + FromPrimitive
    + ToPrimitive
    + std::iter::Sum<Self>
    + std::fmt::Display
    + std::fmt::LowerExp
{
}

impl<T> Scalar for T where
    T: nalgebra::RealField
        + Copy
        + Default
        + FromPrimitive
        + ToPrimitive
        + std::iter::Sum<T>
        + std::fmt::Display
        + std::fmt::LowerExp
{
}

/// Convert an `f64` constant into the working scalar (exact for `f64`).
#[inline]
pub fn real<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite f64 converts to any Scalar")
}

/// Convert the working scalar to `f64` (exact for `f64`).
#[inline]
pub fn double<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("Scalar converts to f64")
}
