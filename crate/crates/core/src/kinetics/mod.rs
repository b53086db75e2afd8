//! Point reactor kinetics with six delayed-neutron groups.
//!
//! Reactivity is carried in pcm (1e-5 dk/k) at every public boundary and
//! converted to absolute units only inside the derivative evaluation.
//! Power is normalized so that 1.0 is the nominal, critical operating point.

mod engine;
mod integrate;
mod worth;

pub use engine::{BiasMode, Engine};
pub use integrate::{
    integrate, integrate_observed, integrate_terminal, pyrk_mode_trace, ReactivitySource,
    ReactivityTrace, Trajectory, DIVERGENCE_POWER,
};
pub use worth::{bank_reactivity, RodBankConfig, WorthCurve, WorthShape, TRAVEL_STEPS};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Number of delayed-neutron precursor groups.
pub const GROUPS: usize = 6;

/// One pcm in absolute reactivity units.
pub const PCM: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticsParams {
    /// Delayed fraction per group.
    pub beta: [f64; GROUPS],
    /// Precursor decay constant per group (1/s).
    pub lambda: [f64; GROUPS],
    /// Prompt neutron generation time (s).
    pub generation_time: f64,
    /// Power-coefficient feedback (pcm per unit normalized power).
    pub alpha_p: f64,
}

#[allow(clippy::approx_constant)] // 0.3010 is a decay constant
impl Default for KineticsParams {
    fn default() -> Self {
        Self {
            beta: [
                21.1e-5, 140.2e-5, 125.4e-5, 252.8e-5, 74.3e-5, 27.0e-5,
            ],
            lambda: [0.0124, 0.0305, 0.1110, 0.3010, 1.1400, 3.0100],
            generation_time: 2e-5,
            alpha_p: 2000.0,
        }
    }
}

impl KineticsParams {
    pub fn beta_total(&self) -> f64 {
        self.beta.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (&b, &l)) in self.beta.iter().zip(&self.lambda).enumerate() {
            if !(b.is_finite() && b > 0.0) {
                return Err(domain(format!("beta[{i}] must be positive, got {b}")));
            }
            if !(l.is_finite() && l > 0.0) {
                return Err(domain(format!("lambda[{i}] must be positive, got {l}")));
            }
        }
        if !(self.generation_time.is_finite() && self.generation_time > 0.0) {
            return Err(domain(format!(
                "generation time must be positive, got {}",
                self.generation_time
            )));
        }
        if !(self.alpha_p.is_finite() && self.alpha_p >= 0.0) {
            return Err(domain(format!(
                "alpha_p must be nonnegative, got {}",
                self.alpha_p
            )));
        }
        Ok(())
    }

    /// Largest RK4 step that keeps the prompt mode stable at the given power,
    /// assuming zero net reactivity. The prompt eigenvalue is approximately
    /// `-(beta + alpha_p * power) / generation_time` and the real-axis RK4
    /// stability limit is about 2.78.
    pub fn rk4_step_bound(&self, power: f64) -> f64 {
        let stiff = (self.beta_total() + self.alpha_p * PCM * power.max(0.0)) / self.generation_time;
        2.78 / stiff
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactorState {
    pub t: f64,
    pub power: f64,
    pub precursors: [f64; GROUPS],
}

/// Critical equilibrium at `power0`: every precursor group balances its
/// production against decay.
pub fn steady_state_init(params: &KineticsParams, power0: f64) -> Result<ReactorState> {
    if !(power0.is_finite() && power0 > 0.0) {
        return Err(domain(format!("initial power must be positive, got {power0}")));
    }
    params.validate()?;
    let mut precursors = [0.0; GROUPS];
    for (c, (&b, &l)) in precursors.iter_mut().zip(params.beta.iter().zip(&params.lambda)) {
        *c = b / (params.generation_time * l) * power0;
    }
    Ok(ReactorState {
        t: 0.0,
        power: power0,
        precursors,
    })
}
