//! Gaussian-process core: structured covariance assembly, marginal
//! likelihood with gradients, and posterior queries for the interaction
//! kernel.

mod assembly;
mod likelihood;
mod posterior;
#[cfg(test)]
pub(crate) mod testutil;

pub use assembly::{assemble_cross_cov, assemble_ff_cov, DiffTensor, MAX_DNML};
pub use likelihood::{cholesky_with_jitter, nll, nll_grad, GpModel};
pub use posterior::CovarianceCache;
