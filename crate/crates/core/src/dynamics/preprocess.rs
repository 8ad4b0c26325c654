//! Raw position-frame ingestion: normalization, smoothing, finite-difference
//! differentiation, and packaging as a second-order observation set.

use super::{InteractionVariable, ObservationSet, Order, State};
use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// Turn a sequence of raw position frames (one flat `d * n` vector per
/// frame, agent-major) into a second-order [`ObservationSet`].
///
/// Pipeline: min-max normalize every coordinate axis to `[0, 1]`, smooth
/// with a centered moving average of width `window` (`window == 1` means no
/// smoothing), then differentiate with central differences to get
/// velocities and accelerations. The set packages the frames in `select`
/// (original frame indices; defaults to every frame where the stencil
/// fits) as one observed trajectory.
pub fn preprocess_real_data<T: Scalar>(
    frames: &[Vec<T>],
    d: usize,
    window: usize,
    dt: T,
    select: Option<&[usize]>,
) -> Result<ObservationSet<T>> {
    if d == 0 || window == 0 {
        return Err(Error::InvalidInput("dimension and window must be positive".into()));
    }
    if !(dt > T::zero()) {
        return Err(Error::InvalidInput("frame spacing must be positive".into()));
    }
    if frames.len() < window + 2 {
        return Err(Error::InvalidInput(format!(
            "need at least window + 2 = {} frames, got {}",
            window + 2,
            frames.len()
        )));
    }
    let dim = frames[0].len();
    if dim == 0 || dim % d != 0 {
        return Err(Error::Ingestion {
            frame: 0,
            reason: format!("frame length {dim} is not a multiple of d = {d}"),
        });
    }
    let n = dim / d;
    if n < 2 {
        return Err(Error::InvalidInput("need at least two agents".into()));
    }
    for (idx, frame) in frames.iter().enumerate() {
        if frame.len() != dim {
            return Err(Error::Ingestion {
                frame: idx,
                reason: format!("expected {dim} values, got {}", frame.len()),
            });
        }
        if frame.iter().any(|x| !x.is_finite()) {
            return Err(Error::Ingestion { frame: idx, reason: "non-finite coordinate".into() });
        }
    }

    // per-axis min-max normalization over the whole recording
    let mut lo = vec![T::max_value().unwrap_or_else(T::one); d];
    let mut hi = vec![T::min_value().unwrap_or_else(|| -T::one()); d];
    for frame in frames {
        for (idx, &value) in frame.iter().enumerate() {
            let axis = idx % d;
            lo[axis] = lo[axis].min(value);
            hi[axis] = hi[axis].max(value);
        }
    }
    let span: Vec<T> = lo.iter().zip(&hi).map(|(l, h)| *h - *l).collect();
    let normalized: Vec<Vec<T>> = frames
        .iter()
        .map(|frame| {
            frame
                .iter()
                .enumerate()
                .map(|(idx, &value)| {
                    let axis = idx % d;
                    if span[axis] > T::zero() {
                        (value - lo[axis]) / span[axis]
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
        .collect();

    // centered moving average; window = 1 is the identity
    let back = (window - 1) / 2;
    let fwd = window / 2;
    let first_smooth = back;
    let last_smooth = frames.len() - 1 - fwd;
    let smoothed: Vec<Vec<T>> = (first_smooth..=last_smooth)
        .map(|center| {
            let mut acc = vec![T::zero(); dim];
            for frame in &normalized[center - back..=center + fwd] {
                for (a, &value) in acc.iter_mut().zip(frame) {
                    *a += value;
                }
            }
            let inv = T::one() / real::<T>(window as f64);
            acc.into_iter().map(|v| v * inv).collect()
        })
        .collect();

    // central differences need one smoothed neighbor on each side
    let first_valid = first_smooth + 1;
    let last_valid = last_smooth - 1;
    if first_valid > last_valid {
        return Err(Error::InvalidInput("not enough frames for the difference stencil".into()));
    }
    let default_select: Vec<usize> = (first_valid..=last_valid).collect();
    let select = select.unwrap_or(&default_select);
    if select.is_empty() {
        return Err(Error::InvalidInput("no frames selected".into()));
    }
    if select.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("selected frames must be strictly increasing".into()));
    }
    if select[0] < first_valid || select[select.len() - 1] > last_valid {
        return Err(Error::InvalidInput(format!(
            "selected frames must lie in [{first_valid}, {last_valid}]"
        )));
    }

    let two_dt = real::<T>(2.0) * dt;
    let dt2 = dt * dt;
    let mut times = Vec::with_capacity(select.len());
    let mut states = Vec::with_capacity(select.len());
    let mut targets = Vec::with_capacity(select.len());
    for &frame_idx in select {
        let s = frame_idx - first_smooth;
        let prev = &smoothed[s - 1];
        let here = &smoothed[s];
        let next = &smoothed[s + 1];
        let velocity: Vec<T> =
            (0..dim).map(|i| (next[i] - prev[i]) / two_dt).collect();
        let accel: Vec<T> =
            (0..dim).map(|i| (next[i] - real::<T>(2.0) * here[i] + prev[i]) / dt2).collect();
        let t = dt * real::<T>(frame_idx as f64);
        times.push(t);
        states.push(State::second_order(here.clone(), velocity, t));
        targets.push(accel);
    }

    let obs = ObservationSet {
        d,
        n,
        order: Order::Second,
        interaction: InteractionVariable::VelocityDifference,
        m_count: 1,
        l_count: select.len(),
        times,
        states,
        targets,
        sigma_true: None,
        seed: None,
    };
    obs.validate()?;
    Ok(obs)
}

/// Parse `frame,agent,x,y,...` CSV rows into per-frame flat position
/// vectors. Every agent must appear in every frame.
pub fn frames_from_csv<T: Scalar>(text: &str, d: usize) -> Result<Vec<Vec<T>>> {
    let mut cells: std::collections::BTreeMap<(usize, usize), Vec<T>> =
        std::collections::BTreeMap::new();
    let mut max_frame = 0usize;
    let mut max_agent = 0usize;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line_no == 0 && line.chars().any(|c| c.is_ascii_alphabetic()) {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + d {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, got {}",
                line_no + 1,
                2 + d,
                fields.len()
            )));
        }
        let frame: usize =
            fields[0].parse().map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)))?;
        let agent: usize =
            fields[1].parse().map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)))?;
        let mut coords = Vec::with_capacity(d);
        for field in &fields[2..] {
            let v: f64 =
                field.parse().map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)))?;
            coords.push(real(v));
        }
        max_frame = max_frame.max(frame);
        max_agent = max_agent.max(agent);
        cells.insert((frame, agent), coords);
    }
    if cells.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    let n = max_agent + 1;
    let mut frames = Vec::with_capacity(max_frame + 1);
    for frame in 0..=max_frame {
        let mut flat = Vec::with_capacity(n * d);
        for agent in 0..n {
            let coords = cells.get(&(frame, agent)).ok_or(Error::Ingestion {
                frame,
                reason: format!("agent {agent} missing"),
            })?;
            flat.extend_from_slice(coords);
        }
        frames.push(flat);
    }
    Ok(frames)
}
