//! Non-collective force families and their parameter packing.
//!
//! Every family exposes its scalar parameters as a flat vector `alpha` so
//! the likelihood trainer can move them jointly with the kernel
//! hyperparameters. Derivatives with respect to `alpha` are analytic.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Per-agent force independent of the other agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub enum NonCollectiveForce<T: Scalar> {
    /// No force; `alpha` is empty.
    Zero,
    /// Opinion dynamics with stubborn agents: agent `stubborn[j]` feels
    /// `-kappa (x_i - biases[j])`, everyone else feels nothing.
    /// `alpha = [biases.., kappa]`. First-order systems only.
    StubbornOpinion {
        biases: Vec<T>,
        kappa: T,
        stubborn: Vec<usize>,
    },
    /// Self-propulsion with nonlinear drag: `(gamma - beta |v_i|^2) v_i`.
    /// `alpha = [gamma, beta]`. Second-order systems only.
    SelfPropulsion { gamma: T, beta: T },
    /// Rayleigh-type friction `kappa v_i (1 - |v_i|^p)`.
    /// `alpha = [kappa, p]`. Second-order systems only.
    RayleighFriction { kappa: T, p: T },
}

impl<T: Scalar> NonCollectiveForce<T> {
    /// Number of trainable scalar parameters.
    pub fn param_count(&self) -> usize {
        match self {
            NonCollectiveForce::Zero => 0,
            NonCollectiveForce::StubbornOpinion { biases, .. } => biases.len() + 1,
            NonCollectiveForce::SelfPropulsion { .. } => 2,
            NonCollectiveForce::RayleighFriction { .. } => 2,
        }
    }

    /// Flatten the parameters into `alpha`.
    pub fn pack(&self) -> Vec<T> {
        match self {
            NonCollectiveForce::Zero => vec![],
            NonCollectiveForce::StubbornOpinion { biases, kappa, .. } => {
                let mut alpha = biases.clone();
                alpha.push(*kappa);
                alpha
            }
            NonCollectiveForce::SelfPropulsion { gamma, beta } => vec![*gamma, *beta],
            NonCollectiveForce::RayleighFriction { kappa, p } => vec![*kappa, *p],
        }
    }

    /// Rebuild the same family with parameters taken from `alpha`.
    pub fn with_params(&self, alpha: &[T]) -> Result<Self> {
        if alpha.len() != self.param_count() {
            return Err(Error::InvalidInput(format!(
                "force family takes {} parameters, got {}",
                self.param_count(),
                alpha.len()
            )));
        }
        Ok(match self {
            NonCollectiveForce::Zero => NonCollectiveForce::Zero,
            NonCollectiveForce::StubbornOpinion { stubborn, .. } => {
                NonCollectiveForce::StubbornOpinion {
                    biases: alpha[..alpha.len() - 1].to_vec(),
                    kappa: alpha[alpha.len() - 1],
                    stubborn: stubborn.clone(),
                }
            }
            NonCollectiveForce::SelfPropulsion { .. } => {
                NonCollectiveForce::SelfPropulsion { gamma: alpha[0], beta: alpha[1] }
            }
            NonCollectiveForce::RayleighFriction { .. } => {
                NonCollectiveForce::RayleighFriction { kappa: alpha[0], p: alpha[1] }
            }
        })
    }

    /// True if the family reads velocities (and therefore needs a
    /// second-order state).
    pub fn needs_velocity(&self) -> bool {
        matches!(
            self,
            NonCollectiveForce::SelfPropulsion { .. } | NonCollectiveForce::RayleighFriction { .. }
        )
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let NonCollectiveForce::StubbornOpinion { biases, stubborn, .. } = self {
            if biases.len() != stubborn.len() {
                return Err(Error::InvalidInput(format!(
                    "{} biases for {} stubborn agents",
                    biases.len(),
                    stubborn.len()
                )));
            }
            if stubborn.iter().any(|&i| i >= n) {
                return Err(Error::InvalidInput("stubborn index out of range".into()));
            }
            let mut seen = stubborn.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != stubborn.len() {
                return Err(Error::InvalidInput("duplicate stubborn index".into()));
            }
        }
        Ok(())
    }

    /// Evaluate the force for all agents, returning a `d * n` vector.
    /// `v` must be `Some` for velocity-dependent families.
    pub fn eval(&self, d: usize, n: usize, x: &[T], v: Option<&[T]>) -> Vec<T> {
        let mut out = vec![T::zero(); d * n];
        self.eval_into(d, n, x, v, &mut out);
        out
    }

    pub(crate) fn eval_into(&self, d: usize, n: usize, x: &[T], v: Option<&[T]>, out: &mut [T]) {
        out.fill(T::zero());
        match self {
            NonCollectiveForce::Zero => {}
            NonCollectiveForce::StubbornOpinion { biases, kappa, stubborn } => {
                for (j, &i) in stubborn.iter().enumerate() {
                    for c in 0..d {
                        out[i * d + c] = -*kappa * (x[i * d + c] - biases[j]);
                    }
                }
            }
            NonCollectiveForce::SelfPropulsion { gamma, beta } => {
                let v = v.expect("self-propulsion needs velocities");
                for i in 0..n {
                    let vi = &v[i * d..(i + 1) * d];
                    let speed2: T = vi.iter().map(|c| *c * *c).sum();
                    let factor = *gamma - *beta * speed2;
                    for c in 0..d {
                        out[i * d + c] = factor * vi[c];
                    }
                }
            }
            NonCollectiveForce::RayleighFriction { kappa, p } => {
                let v = v.expect("Rayleigh friction needs velocities");
                for i in 0..n {
                    let vi = &v[i * d..(i + 1) * d];
                    let speed2: T = vi.iter().map(|c| *c * *c).sum();
                    let factor = if speed2 > T::zero() {
                        *kappa * (T::one() - speed2.sqrt().powf(*p))
                    } else {
                        T::zero()
                    };
                    for c in 0..d {
                        out[i * d + c] = factor * vi[c];
                    }
                }
            }
        }
    }

    /// Analytic partials of the stacked force vector with respect to each
    /// parameter: `grads[j]` is the `d * n` vector `dF/d alpha_j`.
    pub fn grad_params(&self, d: usize, n: usize, x: &[T], v: Option<&[T]>) -> Vec<Vec<T>> {
        let mut grads = vec![vec![T::zero(); d * n]; self.param_count()];
        match self {
            NonCollectiveForce::Zero => {}
            NonCollectiveForce::StubbornOpinion { biases, kappa, stubborn } => {
                let kappa_slot = biases.len();
                for (j, &i) in stubborn.iter().enumerate() {
                    for c in 0..d {
                        grads[j][i * d + c] = *kappa;
                        grads[kappa_slot][i * d + c] = -(x[i * d + c] - biases[j]);
                    }
                }
            }
            NonCollectiveForce::SelfPropulsion { .. } => {
                let v = v.expect("self-propulsion needs velocities");
                for i in 0..n {
                    let vi = &v[i * d..(i + 1) * d];
                    let speed2: T = vi.iter().map(|c| *c * *c).sum();
                    for c in 0..d {
                        grads[0][i * d + c] = vi[c];
                        grads[1][i * d + c] = -speed2 * vi[c];
                    }
                }
            }
            NonCollectiveForce::RayleighFriction { kappa, p } => {
                let v = v.expect("Rayleigh friction needs velocities");
                for i in 0..n {
                    let vi = &v[i * d..(i + 1) * d];
                    let speed2: T = vi.iter().map(|c| *c * *c).sum();
                    if speed2 > T::zero() {
                        let speed = speed2.sqrt();
                        let sp = speed.powf(*p);
                        for c in 0..d {
                            grads[0][i * d + c] = (T::one() - sp) * vi[c];
                            grads[1][i * d + c] = -*kappa * sp * speed.ln() * vi[c];
                        }
                    }
                }
            }
        }
        grads
    }
}
