//! Interacting particle systems: right-hand sides, trajectory integration,
//! synthetic observation sets, and raw-data preprocessing.

mod force;
mod integrate;
mod kernel_model;
mod observe;
mod preprocess;

pub use force::NonCollectiveForce;
pub use integrate::{integrate, integrate_ode, DEFAULT_ATOL, DEFAULT_RTOL};
pub use kernel_model::{InteractionKernel, MorseKernel};
pub use observe::{generate_observations, ObservationSet};
pub use observe::observation_times;
pub use preprocess::{frames_from_csv, preprocess_real_data};

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use serde::{Deserialize, Serialize};

/// Whether the dynamics act on positions only or on positions and
/// velocities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    First,
    Second,
}

/// Which pairwise difference the kernel weight multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionVariable {
    /// `phi(r_ik) (x_k - x_i)`: energy-based interactions.
    PositionDifference,
    /// `phi(r_ik) (v_k - v_i)`: alignment interactions. The kernel argument
    /// is still the position distance.
    VelocityDifference,
}

/// Initial-condition distribution: i.i.d. uniform positions per coordinate,
/// with velocities either absent, zero, or uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct Mu0<T: Scalar> {
    pub pos_low: T,
    pub pos_high: T,
    pub vel: VelocityInit<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub enum VelocityInit<T: Scalar> {
    Zero,
    Uniform { low: T, high: T },
}

impl<T: Scalar> Mu0<T> {
    pub fn positions(low: T, high: T) -> Self {
        Self { pos_low: low, pos_high: high, vel: VelocityInit::Zero }
    }

    /// Draw one initial state. Positions are sampled coordinate by
    /// coordinate, then velocities; the draw order is part of the
    /// reproducibility contract.
    pub fn sample<R: rand::Rng>(&self, d: usize, n: usize, order: Order, rng: &mut R) -> State<T> {
        let mut draw = |low: T, high: T| -> T {
            let lo = crate::scalar::double(low);
            let hi = crate::scalar::double(high);
            if hi > lo {
                real(rng.random_range(lo..hi))
            } else {
                low
            }
        };
        let x: Vec<T> = (0..d * n).map(|_| draw(self.pos_low, self.pos_high)).collect();
        let v = match order {
            Order::First => None,
            Order::Second => Some(match self.vel {
                VelocityInit::Zero => vec![T::zero(); d * n],
                VelocityInit::Uniform { low, high } => {
                    (0..d * n).map(|_| draw(low, high)).collect()
                }
            }),
        };
        State { x, v, t: T::zero() }
    }
}

/// System state at one instant: stacked positions, optional stacked
/// velocities, and the time stamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct State<T: Scalar> {
    pub x: Vec<T>,
    pub v: Option<Vec<T>>,
    pub t: T,
}

impl<T: Scalar> State<T> {
    pub fn first_order(x: Vec<T>, t: T) -> Self {
        Self { x, v: None, t }
    }

    pub fn second_order(x: Vec<T>, v: Vec<T>, t: T) -> Self {
        Self { x, v: Some(v), t }
    }

    /// Euclidean distance between two states over all stored components.
    pub fn distance(&self, other: &Self) -> T {
        let mut acc = T::zero();
        for (a, b) in self.x.iter().zip(&other.x) {
            acc += (*a - *b) * (*a - *b);
        }
        if let (Some(va), Some(vb)) = (&self.v, &other.v) {
            for (a, b) in va.iter().zip(vb) {
                acc += (*a - *b) * (*a - *b);
            }
        }
        acc.sqrt()
    }
}

/// Full description of an interacting particle system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct ParticleSystemSpec<T: Scalar> {
    pub d: usize,
    pub n: usize,
    pub order: Order,
    pub interaction: InteractionVariable,
    pub force: NonCollectiveForce<T>,
    pub kernel: InteractionKernel<T>,
    /// Per-agent masses; only read by second-order systems.
    pub masses: Vec<T>,
    pub mu0: Mu0<T>,
}

impl<T: Scalar> ParticleSystemSpec<T> {
    pub fn new(
        d: usize,
        n: usize,
        order: Order,
        interaction: InteractionVariable,
        force: NonCollectiveForce<T>,
        kernel: InteractionKernel<T>,
        mu0: Mu0<T>,
    ) -> Result<Self> {
        let spec = Self { d, n, order, interaction, force, kernel, masses: vec![T::one(); n], mu0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_masses(mut self, masses: Vec<T>) -> Result<Self> {
        self.masses = masses;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 agents, got {}", self.n)));
        }
        if self.d == 0 {
            return Err(Error::InvalidInput("spatial dimension must be positive".into()));
        }
        if self.masses.len() != self.n || self.masses.iter().any(|m| !(*m > T::zero())) {
            return Err(Error::InvalidInput("need one positive mass per agent".into()));
        }
        if self.interaction == InteractionVariable::VelocityDifference && self.order == Order::First
        {
            return Err(Error::InvalidInput(
                "velocity-difference interactions need a second-order system".into(),
            ));
        }
        if self.force.needs_velocity() && self.order == Order::First {
            return Err(Error::InvalidInput(
                "velocity-dependent force families need a second-order system".into(),
            ));
        }
        if matches!(self.force, NonCollectiveForce::StubbornOpinion { .. })
            && self.order == Order::Second
        {
            return Err(Error::InvalidInput(
                "the stubborn-opinion force is a first-order model".into(),
            ));
        }
        self.force.validate(self.n)
    }

    pub fn state_dim(&self) -> usize {
        self.d * self.n
    }

    /// Replace the kernel (e.g. with a learned table) keeping everything
    /// else.
    pub fn with_kernel(mut self, kernel: InteractionKernel<T>) -> Self {
        self.kernel = kernel;
        self
    }

    /// Replace the force parameters with `alpha`.
    pub fn with_force_params(mut self, alpha: &[T]) -> Result<Self> {
        self.force = self.force.with_params(alpha)?;
        Ok(self)
    }
}

/// Derivative targets of the system at `state`: velocities for first-order
/// systems, accelerations for second-order ones. Returns a `d * n` vector.
pub fn rhs<T: Scalar>(spec: &ParticleSystemSpec<T>, state: &State<T>) -> Result<Vec<T>> {
    let dim = spec.state_dim();
    if state.x.len() != dim {
        return Err(Error::InvalidInput(format!(
            "state has {} position components, spec wants {dim}",
            state.x.len()
        )));
    }
    match (spec.order, &state.v) {
        (Order::Second, Some(v)) if v.len() != dim => {
            return Err(Error::InvalidInput(format!(
                "state has {} velocity components, spec wants {dim}",
                v.len()
            )))
        }
        (Order::Second, None) => {
            return Err(Error::InvalidInput("second-order system needs velocities".into()))
        }
        (Order::First, Some(_)) => {
            return Err(Error::InvalidInput("first-order system carries no velocities".into()))
        }
        _ => {}
    }
    let mut out = vec![T::zero(); dim];
    rhs_into(spec, &state.x, state.v.as_deref(), &mut out)?;
    Ok(out)
}

/// In-place variant used by the integrator. Assumes dimensions already
/// checked.
pub(crate) fn rhs_into<T: Scalar>(
    spec: &ParticleSystemSpec<T>,
    x: &[T],
    v: Option<&[T]>,
    out: &mut [T],
) -> Result<()> {
    let d = spec.d;
    let n = spec.n;
    spec.force.eval_into(d, n, x, v, out);

    let inv_n = T::one() / real::<T>(n as f64);
    // Pairwise terms are antisymmetric in (i, k) for both interaction
    // variables, so each unordered pair is evaluated once.
    for i in 0..n {
        for k in (i + 1)..n {
            let mut r2 = T::zero();
            for c in 0..d {
                let diff = x[k * d + c] - x[i * d + c];
                r2 += diff * diff;
            }
            let r = r2.sqrt();
            let w = spec.kernel.eval(r);
            if !w.is_finite() {
                return Err(Error::Numeric(format!(
                    "kernel returned a non-finite value at distance {r}"
                )));
            }
            let wn = w * inv_n;
            match spec.interaction {
                InteractionVariable::PositionDifference => {
                    for c in 0..d {
                        let diff = x[k * d + c] - x[i * d + c];
                        out[i * d + c] += wn * diff;
                        out[k * d + c] -= wn * diff;
                    }
                }
                InteractionVariable::VelocityDifference => {
                    let v = v.expect("velocity-difference interaction needs velocities");
                    for c in 0..d {
                        let diff = v[k * d + c] - v[i * d + c];
                        out[i * d + c] += wn * diff;
                        out[k * d + c] -= wn * diff;
                    }
                }
            }
        }
    }

    if spec.order == Order::Second {
        for i in 0..n {
            let inv_m = T::one() / spec.masses[i];
            for c in 0..d {
                out[i * d + c] *= inv_m;
            }
        }
    }
    Ok(())
}

/// All `n (n - 1) / 2` pairwise distances at a position vector.
pub fn pairwise_distances<T: Scalar>(d: usize, n: usize, x: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for k in (i + 1)..n {
            let mut r2 = T::zero();
            for c in 0..d {
                let diff = x[k * d + c] - x[i * d + c];
                r2 += diff * diff;
            }
            out.push(r2.sqrt());
        }
    }
    out
}
