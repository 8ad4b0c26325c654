//! Training data: states and noisy derivative observations on an M x L
//! grid, plus JSON / CSV serialization.

use super::{integrate, rhs, InteractionVariable, Order, ParticleSystemSpec, State};
use crate::error::{Error, Result};
use crate::scalar::{double, real, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Observations `{Y^(m,l), Z^(m,l)}`: exact states and noisy derivative
/// targets (velocities for first-order systems, accelerations for
/// second-order ones). Index layout is trajectory-major: `(m, l)` lives at
/// `m * l_count + l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct ObservationSet<T: Scalar> {
    pub d: usize,
    pub n: usize,
    pub order: Order,
    pub interaction: InteractionVariable,
    pub m_count: usize,
    pub l_count: usize,
    pub times: Vec<T>,
    pub states: Vec<State<T>>,
    pub targets: Vec<Vec<T>>,
    pub sigma_true: Option<T>,
    pub seed: Option<u64>,
}

impl<T: Scalar> ObservationSet<T> {
    pub fn validate(&self) -> Result<()> {
        let dim = self.d * self.n;
        if self.m_count == 0 || self.l_count == 0 {
            return Err(Error::InvalidInput("need at least one trajectory and snapshot".into()));
        }
        if self.times.len() != self.l_count {
            return Err(Error::InvalidInput("times length must equal L".into()));
        }
        if self.times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("times must be strictly increasing".into()));
        }
        if self.states.len() != self.m_count * self.l_count
            || self.targets.len() != self.m_count * self.l_count
        {
            return Err(Error::InvalidInput("states/targets must have M * L entries".into()));
        }
        for s in &self.states {
            if s.x.len() != dim {
                return Err(Error::InvalidInput("state dimension mismatch".into()));
            }
            match (self.order, &s.v) {
                (Order::Second, Some(v)) if v.len() == dim => {}
                (Order::First, None) => {}
                _ => return Err(Error::InvalidInput("state order mismatch".into())),
            }
        }
        if self.targets.iter().any(|z| z.len() != dim) {
            return Err(Error::InvalidInput("target dimension mismatch".into()));
        }
        Ok(())
    }

    pub fn state(&self, m: usize, l: usize) -> &State<T> {
        &self.states[m * self.l_count + l]
    }

    pub fn target(&self, m: usize, l: usize) -> &[T] {
        &self.targets[m * self.l_count + l]
    }

    /// Total scalar observation count `d N M L`.
    pub fn dnml(&self) -> usize {
        self.d * self.n * self.m_count * self.l_count
    }

    /// All targets stacked into one `dNML` vector, `(m, l)`-major.
    pub fn stacked_targets(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.dnml());
        for z in &self.targets {
            out.extend_from_slice(z);
        }
        out
    }

    /// Largest pairwise distance over all stored snapshots.
    pub fn max_pairwise_distance(&self) -> T {
        let mut r_max = T::zero();
        for s in &self.states {
            for r in super::pairwise_distances(self.d, self.n, &s.x) {
                r_max = r_max.max(r);
            }
        }
        r_max
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn data_hash(&self) -> String
    where
        T: Serialize + serde::de::DeserializeOwned,
    {
        let bytes = serde_json::to_vec(self).expect("observation sets serialize");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json_string(&self) -> Result<String>
    where
        T: Serialize + serde::de::DeserializeOwned,
    {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self>
    where
        T: Serialize + serde::de::DeserializeOwned,
    {
        let obs: Self = serde_json::from_str(s)?;
        obs.validate()?;
        Ok(obs)
    }

    /// Flat CSV with a `#`-prefixed metadata preamble. Columns:
    /// `m,l,t,agent,coord,x[,v],target`; the `v` column is present exactly
    /// for second-order sets.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str("# interaction-gp observations v1\n");
        out.push_str(&format!(
            "# d={} n={} order={} interaction={} M={} L={}\n",
            self.d,
            self.n,
            order_tag(self.order),
            interaction_tag(self.interaction),
            self.m_count,
            self.l_count
        ));
        if let Some(sigma) = self.sigma_true {
            out.push_str(&format!("# sigma={sigma}\n"));
        }
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed={seed}\n"));
        }
        let second = self.order == Order::Second;
        out.push_str(if second { "m,l,t,agent,coord,x,v,target\n" } else { "m,l,t,agent,coord,x,target\n" });
        for m in 0..self.m_count {
            for l in 0..self.l_count {
                let state = self.state(m, l);
                let target = self.target(m, l);
                for agent in 0..self.n {
                    for coord in 0..self.d {
                        let idx = agent * self.d + coord;
                        if second {
                            let v = state.v.as_ref().expect("validated")[idx];
                            out.push_str(&format!(
                                "{m},{l},{},{agent},{coord},{},{v},{}\n",
                                self.times[l], state.x[idx], target[idx]
                            ));
                        } else {
                            out.push_str(&format!(
                                "{m},{l},{},{agent},{coord},{},{}\n",
                                self.times[l], state.x[idx], target[idx]
                            ));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut d = None;
        let mut n = None;
        let mut order = None;
        let mut interaction = None;
        let mut m_count = None;
        let mut l_count = None;
        let mut sigma_true = None;
        let mut seed = None;
        let mut rows = Vec::new();
        let mut saw_header = false;
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for token in meta.split_whitespace() {
                    if let Some((key, value)) = token.split_once('=') {
                        match key {
                            "d" => d = Some(parse_usize(value, line_no)?),
                            "n" => n = Some(parse_usize(value, line_no)?),
                            "M" => m_count = Some(parse_usize(value, line_no)?),
                            "L" => l_count = Some(parse_usize(value, line_no)?),
                            "order" => order = Some(parse_order(value, line_no)?),
                            "interaction" => {
                                interaction = Some(parse_interaction(value, line_no)?)
                            }
                            "sigma" => sigma_true = Some(parse_real::<T>(value, line_no)?),
                            "seed" => seed = Some(parse_usize(value, line_no)? as u64),
                            _ => {}
                        }
                    }
                }
                continue;
            }
            if !saw_header {
                saw_header = true; // column header
                continue;
            }
            rows.push((line_no, line.to_string()));
        }
        let (d, n, order, interaction, m_count, l_count) = match (d, n, order, interaction, m_count, l_count) {
            (Some(a), Some(b), Some(c), Some(e), Some(f), Some(g)) => (a, b, c, e, f, g),
            _ => return Err(Error::Parse("missing metadata preamble in observation CSV".into())),
        };
        let dim = d * n;
        let second = order == Order::Second;
        let mut times = vec![T::zero(); l_count];
        let mut states: Vec<State<T>> = (0..m_count * l_count)
            .map(|_| State {
                x: vec![T::zero(); dim],
                v: second.then(|| vec![T::zero(); dim]),
                t: T::zero(),
            })
            .collect();
        let mut targets = vec![vec![T::zero(); dim]; m_count * l_count];
        let expected_fields = if second { 8 } else { 7 };
        for (line_no, line) in rows {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != expected_fields {
                return Err(Error::Parse(format!(
                    "line {}: expected {expected_fields} fields, got {}",
                    line_no + 1,
                    fields.len()
                )));
            }
            let m = parse_usize(fields[0], line_no)?;
            let l = parse_usize(fields[1], line_no)?;
            let t = parse_real::<T>(fields[2], line_no)?;
            let agent = parse_usize(fields[3], line_no)?;
            let coord = parse_usize(fields[4], line_no)?;
            if m >= m_count || l >= l_count || agent >= n || coord >= d {
                return Err(Error::Parse(format!("line {}: index out of range", line_no + 1)));
            }
            let idx = agent * d + coord;
            let slot = m * l_count + l;
            times[l] = t;
            states[slot].t = t;
            states[slot].x[idx] = parse_real::<T>(fields[5], line_no)?;
            if second {
                states[slot].v.as_mut().expect("second order")[idx] =
                    parse_real::<T>(fields[6], line_no)?;
            }
            targets[slot][idx] = parse_real::<T>(fields[expected_fields - 1], line_no)?;
        }
        let obs = ObservationSet {
            d,
            n,
            order,
            interaction,
            m_count,
            l_count,
            times,
            states,
            targets,
            sigma_true,
            seed,
        };
        obs.validate()?;
        Ok(obs)
    }
}

fn order_tag(order: Order) -> &'static str {
    match order {
        Order::First => "first",
        Order::Second => "second",
    }
}

fn interaction_tag(iv: InteractionVariable) -> &'static str {
    match iv {
        InteractionVariable::PositionDifference => "position_difference",
        InteractionVariable::VelocityDifference => "velocity_difference",
    }
}

fn parse_order(s: &str, line_no: usize) -> Result<Order> {
    match s {
        "first" => Ok(Order::First),
        "second" => Ok(Order::Second),
        other => Err(Error::Parse(format!("line {}: unknown order '{other}'", line_no + 1))),
    }
}

fn parse_interaction(s: &str, line_no: usize) -> Result<InteractionVariable> {
    match s {
        "position_difference" => Ok(InteractionVariable::PositionDifference),
        "velocity_difference" => Ok(InteractionVariable::VelocityDifference),
        other => Err(Error::Parse(format!("line {}: unknown interaction '{other}'", line_no + 1))),
    }
}

fn parse_usize(s: &str, line_no: usize) -> Result<usize> {
    s.parse().map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)))
}

fn parse_real<T: Scalar>(s: &str, line_no: usize) -> Result<T> {
    let v: f64 = s.parse().map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)))?;
    Ok(real(v))
}

/// The observation grid: `l` equidistant times from `0` to `t_end`
/// inclusive (just `t = 0` when `l == 1`).
pub fn observation_times<T: Scalar>(l: usize, t_end: T) -> Vec<T> {
    if l == 1 {
        return vec![T::zero()];
    }
    (0..l).map(|i| t_end * real(i as f64) / real((l - 1) as f64)).collect()
}

/// Simulate `m_count` trajectories from i.i.d. initial conditions and
/// observe them at `l_count` equidistant times on `[0, t_end]`. States are
/// exact (up to integrator tolerance); i.i.d. `N(0, sigma^2)` noise is
/// added to the derivative targets only. Each trajectory draws from its own
/// counter-indexed RNG stream, so the result does not depend on evaluation
/// order.
pub fn generate_observations<T: Scalar>(
    spec: &ParticleSystemSpec<T>,
    m_count: usize,
    l_count: usize,
    t_end: T,
    sigma: T,
    seed: u64,
) -> Result<ObservationSet<T>> {
    if m_count == 0 || l_count == 0 {
        return Err(Error::InvalidInput("M and L must be at least 1".into()));
    }
    if !(t_end > T::zero()) {
        return Err(Error::InvalidInput("time horizon must be positive".into()));
    }
    if sigma < T::zero() {
        return Err(Error::InvalidInput("noise level must be nonnegative".into()));
    }
    spec.validate()?;
    let times = observation_times(l_count, t_end);
    let rtol: T = real(super::DEFAULT_RTOL);
    let atol: T = real(super::DEFAULT_ATOL);
    let sigma_f = double(sigma);

    let mut states = Vec::with_capacity(m_count * l_count);
    let mut targets = Vec::with_capacity(m_count * l_count);
    for m in 0..m_count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(m as u64);
        let initial = spec.mu0.sample(spec.d, spec.n, spec.order, &mut rng);
        let trajectory = integrate(spec, &initial, &times, rtol, atol).map_err(|e| match e {
            Error::IntegrationFailure { last_good_time, reason, .. } => {
                Error::IntegrationFailure { last_good_time, trajectory: Some(m), reason }
            }
            other => other,
        })?;
        for state in trajectory {
            let mut z = rhs(spec, &state)?;
            if sigma_f > 0.0 {
                let normal = rand_distr::Normal::new(0.0, sigma_f)
                    .map_err(|e| Error::InvalidInput(e.to_string()))?;
                for zi in z.iter_mut() {
                    *zi += real::<T>(normal.sample(&mut rng));
                }
            }
            states.push(state);
            targets.push(z);
        }
    }
    let obs = ObservationSet {
        d: spec.d,
        n: spec.n,
        order: spec.order,
        interaction: spec.interaction,
        m_count,
        l_count,
        times,
        states,
        targets,
        sigma_true: Some(sigma),
        seed: Some(seed),
    };
    obs.validate()?;
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{InteractionKernel, Mu0, NonCollectiveForce};

    fn opinion_spec() -> ParticleSystemSpec<f64> {
        ParticleSystemSpec::new(
            1,
            10,
            Order::First,
            InteractionVariable::PositionDifference,
            NonCollectiveForce::StubbornOpinion {
                biases: vec![1.0, 0.0, -1.0],
                kappa: 10.0,
                stubborn: vec![0, 1, 2],
            },
            InteractionKernel::PiecewiseOpinion,
            Mu0::positions(-1.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_targets_equal_rhs() {
        let spec = opinion_spec();
        let obs = generate_observations(&spec, 2, 3, 5.0, 0.0, 11).unwrap();
        for m in 0..2 {
            for l in 0..3 {
                let exact = rhs(&spec, obs.state(m, l)).unwrap();
                assert_eq!(obs.target(m, l), exact.as_slice());
            }
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let spec = opinion_spec();
        let a = generate_observations(&spec, 3, 4, 2.0, 0.05, 7).unwrap();
        let b = generate_observations(&spec, 3, 4, 2.0, 0.05, 7).unwrap();
        assert_eq!(a.to_json_string().unwrap(), b.to_json_string().unwrap());
        assert_eq!(a.data_hash(), b.data_hash());
        let c = generate_observations(&spec, 3, 4, 2.0, 0.05, 8).unwrap();
        assert_ne!(a.data_hash(), c.data_hash());
    }

    #[test]
    fn observation_grid_includes_endpoints() {
        let times = observation_times::<f64>(4, 15.0);
        assert_eq!(times, vec![0.0, 5.0, 10.0, 15.0]);
        assert_eq!(observation_times::<f64>(1, 15.0), vec![0.0]);
    }

    #[test]
    fn noise_std_matches_requested_level() {
        // opinion-dynamics setup: N = 10, T = 15, M = 6, L = 4, sigma = 0.05
        let spec = opinion_spec();
        let sigma = 0.05;
        let obs = generate_observations(&spec, 6, 4, 15.0, sigma, 0).unwrap();
        let mut residuals = Vec::new();
        for m in 0..6 {
            for l in 0..4 {
                let exact = rhs(&spec, obs.state(m, l)).unwrap();
                for (z, f) in obs.target(m, l).iter().zip(&exact) {
                    residuals.push(z - f);
                }
            }
        }
        assert_eq!(residuals.len(), 240);
        let mean: f64 = residuals.iter().sum::<f64>() / residuals.len() as f64;
        let var: f64 = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / (residuals.len() - 1) as f64;
        let std = var.sqrt();
        assert!(
            (std - sigma).abs() <= 0.2 * sigma,
            "sample std {std} not within 20% of {sigma}"
        );
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let spec = opinion_spec();
        let obs = generate_observations(&spec, 2, 3, 1.0, 0.05, 3).unwrap();
        let csv = obs.to_csv_string();
        let back = ObservationSet::<f64>::from_csv_str(&csv).unwrap();
        assert_eq!(back, obs);
        assert_eq!(back.to_csv_string(), csv);
    }

    #[test]
    fn csv_round_trip_second_order() {
        let spec = ParticleSystemSpec::new(
            2,
            3,
            Order::Second,
            InteractionVariable::PositionDifference,
            NonCollectiveForce::SelfPropulsion { gamma: 1.5, beta: 0.5 },
            InteractionKernel::Morse(
                crate::dynamics::MorseKernel::new(0.5, 0.5, 4.0, 4.0, 0.05).unwrap(),
            ),
            Mu0 {
                pos_low: -0.5,
                pos_high: 0.5,
                vel: crate::dynamics::VelocityInit::Zero,
            },
        )
        .unwrap();
        let obs = generate_observations(&spec, 2, 2, 1.0, 0.1, 5).unwrap();
        let back = ObservationSet::<f64>::from_csv_str(&obs.to_csv_string()).unwrap();
        assert_eq!(back, obs);
        let json = obs.to_json_string().unwrap();
        let back_json = ObservationSet::<f64>::from_json_str(&json).unwrap();
        assert_eq!(back_json, obs);
    }

    #[test]
    fn truncated_csv_is_rejected() {
        let spec = opinion_spec();
        let obs = generate_observations(&spec, 1, 2, 1.0, 0.0, 3).unwrap();
        let csv = obs.to_csv_string();
        let truncated: String = csv.lines().take(4).collect::<Vec<_>>().join("\n");
        assert!(ObservationSet::<f64>::from_csv_str(&truncated).is_err());
    }
}
