//! Learning distance-based interaction kernels of interacting particle
//! systems from noisy trajectory data with Gaussian-process regression.
//!
//! The library simulates first- and second-order systems of the form
//!
//! ```text
//! m_i x_i'' = F(x_i, x_i', alpha) + (1/N) sum_{k != i} phi(|x_k - x_i|) (x_k - x_i)
//! ```
//!
//! places a Matern GP prior on the scalar kernel `phi`, trains the
//! hyperparameters jointly with the non-collective force parameters `alpha`
//! by marginal likelihood, and reconstructs `phi` with pointwise uncertainty.
//! A separate [`theory`] module provides executable checks of the supporting
//! theory: the kernel-ridge-regression form of the posterior mean, an
//! empirical coercivity constant, and a convergence-in-M study.
//!
//! Everything numeric is generic over [`Scalar`] (instantiated at `f64` by
//! the aliases below and by the CLI).

pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod gp;
pub mod interp;
pub mod kernels;
pub mod optimize;
pub mod scalar;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` instantiations of the main domain types.
pub type SystemSpec64 = dynamics::ParticleSystemSpec<f64>;
pub type State64 = dynamics::State<f64>;
pub type ObservationSet64 = dynamics::ObservationSet<f64>;
pub type KernelHyperparams64 = kernels::KernelHyperparams<f64>;
pub type CovarianceCache64 = gp::CovarianceCache<f64>;
pub type TrainedModel64 = training::TrainedModel<f64>;
pub type KernelEstimate64 = evaluation::KernelEstimate<f64>;
pub type EmpiricalMeasure64 = evaluation::EmpiricalMeasure<f64>;
