use serde::{Deserialize, Serialize};

use super::{KineticsParams, ReactorState, GROUPS, PCM};
use crate::error::{domain, Error, Result};

/// Power above which a run is declared diverged.
pub const DIVERGENCE_POWER: f64 = 1e6;

/// Time-dependent part of the net reactivity, in pcm. Power feedback is
/// added by the integrator from [`KineticsParams::alpha_p`].
pub trait ReactivitySource {
    fn rho(&self, t: f64) -> f64;
}

impl<F: Fn(f64) -> f64> ReactivitySource for F {
    fn rho(&self, t: f64) -> f64 {
        self(t)
    }
}

/// Piecewise-linear reactivity schedule; held constant outside its samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactivityTrace {
    samples: Vec<(f64, f64)>,
}

impl ReactivityTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(domain("reactivity trace needs at least one sample"));
        }
        for (i, &(t, rho)) in samples.iter().enumerate() {
            if !t.is_finite() || !rho.is_finite() {
                return Err(domain(format!("non-finite trace sample at index {i}")));
            }
            if i > 0 && t <= samples[i - 1].0 {
                return Err(domain(format!("trace times not strictly increasing at index {i}")));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let s = &self.samples;
        let idx = s.partition_point(|&(ts, _)| ts <= t);
        if idx == 0 {
            return s[0].1;
        }
        if idx == s.len() {
            return s[s.len() - 1].1;
        }
        let (t0, r0) = s[idx - 1];
        let (t1, r1) = s[idx];
        r0 + (r1 - r0) * (t - t0) / (t1 - t0)
    }
}

impl ReactivitySource for ReactivityTrace {
    fn rho(&self, t: f64) -> f64 {
        self.value_at(t)
    }
}

/// Linear ramp from 0 at t = 0 to `rho_insert` at `duration`, held to `horizon`.
pub fn pyrk_mode_trace(rho_insert: f64, duration: f64, horizon: f64) -> Result<ReactivityTrace> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(domain(format!("insertion duration must be positive, got {duration}")));
    }
    if !rho_insert.is_finite() {
        return Err(domain("reactivity insertion must be finite"));
    }
    if !(horizon >= duration) {
        return Err(domain(format!(
            "horizon {horizon} s shorter than insertion duration {duration} s"
        )));
    }
    let mut samples = vec![(0.0, 0.0), (duration, rho_insert)];
    if horizon > duration {
        samples.push((horizon, rho_insert));
    }
    ReactivityTrace::new(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<ReactorState>,
}

impl Trajectory {
    pub fn final_state(&self) -> &ReactorState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

fn step_count(horizon: f64, dt: f64) -> usize {
    let ratio = horizon / dt;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        ratio.ceil() as usize
    }
}

struct Rhs {
    beta: f64,
    inv_gen: f64,
    alpha: f64,
    lambda: [f64; GROUPS],
    source_rate: [f64; GROUPS],
}

impl Rhs {
    fn new(params: &KineticsParams) -> Self {
        let inv_gen = 1.0 / params.generation_time;
        let mut source_rate = [0.0; GROUPS];
        for (s, b) in source_rate.iter_mut().zip(&params.beta) {
            *s = b * inv_gen;
        }
        Self {
            beta: params.beta_total(),
            inv_gen,
            alpha: params.alpha_p,
            lambda: params.lambda,
            source_rate,
        }
    }

    #[inline(always)]
    fn eval(&self, power: f64, c: &[f64; GROUPS], rho_pcm: f64) -> (f64, [f64; GROUPS]) {
        let rho = (rho_pcm - self.alpha * (power - 1.0)) * PCM;
        let mut delayed = 0.0;
        let mut dc = [0.0; GROUPS];
        for i in 0..GROUPS {
            delayed += self.lambda[i] * c[i];
            dc[i] = self.source_rate[i] * power - self.lambda[i] * c[i];
        }
        ((rho - self.beta) * self.inv_gen * power + delayed, dc)
    }
}

#[inline(always)]
fn offset(c: &[f64; GROUPS], k: &[f64; GROUPS], h: f64) -> [f64; GROUPS] {
    let mut out = *c;
    for i in 0..GROUPS {
        out[i] += h * k[i];
    }
    out
}

/// Fixed-step classical RK4 from `state` for `horizon` seconds, calling
/// `observer` on the initial state and after every step. The final step is
/// shortened so the last sample lands exactly on `state.t + horizon`.
pub fn integrate_observed<S, F>(
    state: &ReactorState,
    params: &KineticsParams,
    source: &S,
    horizon: f64,
    dt: f64,
    mut observer: F,
) -> Result<ReactorState>
where
    S: ReactivitySource + ?Sized,
    F: FnMut(&ReactorState),
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(domain(format!("time step must be positive, got {dt}")));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(domain(format!("horizon must be nonnegative, got {horizon}")));
    }
    let rhs = Rhs::new(params);
    let t0 = state.t;
    let t_end = t0 + horizon;
    let n = step_count(horizon, dt);

    let mut cur = *state;
    observer(&cur);
    let mut rho_now = source.rho(cur.t);
    for k in 1..=n {
        let t_next = if k == n { t_end } else { t0 + k as f64 * dt };
        let h = t_next - cur.t;
        let rho_mid = source.rho(cur.t + 0.5 * h);
        let rho_next = source.rho(t_next);

        let p = cur.power;
        let c = &cur.precursors;
        let (k1p, k1c) = rhs.eval(p, c, rho_now);
        let c2 = offset(c, &k1c, 0.5 * h);
        let (k2p, k2c) = rhs.eval(p + 0.5 * h * k1p, &c2, rho_mid);
        let c3 = offset(c, &k2c, 0.5 * h);
        let (k3p, k3c) = rhs.eval(p + 0.5 * h * k2p, &c3, rho_mid);
        let c4 = offset(c, &k3c, h);
        let (k4p, k4c) = rhs.eval(p + h * k3p, &c4, rho_next);

        let w = h / 6.0;
        let power = p + w * (k1p + 2.0 * (k2p + k3p) + k4p);
        let mut precursors = *c;
        for i in 0..GROUPS {
            precursors[i] += w * (k1c[i] + 2.0 * (k2c[i] + k3c[i]) + k4c[i]);
        }
        if !power.is_finite() || power > DIVERGENCE_POWER || power <= 0.0 {
            return Err(Error::Diverged { time: t_next, power });
        }
        cur = ReactorState {
            t: t_next,
            power,
            precursors,
        };
        rho_now = rho_next;
        observer(&cur);
    }
    Ok(cur)
}

pub fn integrate<S: ReactivitySource + ?Sized>(
    state: &ReactorState,
    params: &KineticsParams,
    source: &S,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(step_count(horizon.max(0.0), dt.max(f64::MIN_POSITIVE)).min(1 << 24) + 1);
    integrate_observed(state, params, source, horizon, dt, |s| states.push(*s))?;
    Ok(Trajectory { states })
}

/// As [`integrate`] but keeps only the final state.
pub fn integrate_terminal<S: ReactivitySource + ?Sized>(
    state: &ReactorState,
    params: &KineticsParams,
    source: &S,
    horizon: f64,
    dt: f64,
) -> Result<ReactorState> {
    integrate_observed(state, params, source, horizon, dt, |_| {})
}
