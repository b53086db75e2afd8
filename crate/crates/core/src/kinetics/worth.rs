use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Full travel of a rod bank in simulator steps. Step 0 is fully inserted.
pub const TRAVEL_STEPS: u32 = 180;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorthShape {
    /// Integral worth `-W (z - sin(2 pi z) / (2 pi))`, steepest at mid travel.
    SCurve,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorthCurve {
    /// Worth over full travel (pcm).
    pub total_worth: f64,
    pub travel_steps: u32,
    pub shape: WorthShape,
}

impl Default for WorthCurve {
    fn default() -> Self {
        Self {
            total_worth: 1500.0,
            travel_steps: TRAVEL_STEPS,
            shape: WorthShape::SCurve,
        }
    }
}

impl WorthCurve {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_worth.is_finite() && self.total_worth > 0.0) {
            return Err(domain(format!(
                "total worth must be positive, got {}",
                self.total_worth
            )));
        }
        if self.travel_steps != TRAVEL_STEPS {
            return Err(domain(format!(
                "travel must be {TRAVEL_STEPS} steps, got {}",
                self.travel_steps
            )));
        }
        Ok(())
    }

    pub fn travel(&self) -> f64 {
        f64::from(self.travel_steps)
    }

    pub fn contains(&self, position: f64) -> bool {
        (0.0..=self.travel()).contains(&position)
    }

    /// Integral worth at `position` with no range check. Callers guarantee
    /// `position` lies within travel.
    #[inline]
    pub(crate) fn integral_unchecked(&self, position: f64) -> f64 {
        let z = (self.travel() - position) / self.travel();
        match self.shape {
            WorthShape::SCurve => -self.total_worth * (z - (TAU * z).sin() / TAU),
            WorthShape::Linear => -self.total_worth * z,
        }
    }

    /// Differential worth (pcm per step of withdrawal).
    pub fn differential(&self, position: f64) -> f64 {
        let z = (self.travel() - position) / self.travel();
        let per_z = match self.shape {
            WorthShape::SCurve => 1.0 - (TAU * z).cos(),
            WorthShape::Linear => 1.0,
        };
        self.total_worth * per_z / self.travel()
    }

    /// Position whose integral worth equals `rho` (pcm), by bisection on the
    /// monotone curve. `rho` must lie in `[-total_worth, 0]`.
    pub fn position_for(&self, rho: f64) -> Result<f64> {
        if !(rho.is_finite() && (-self.total_worth..=0.0).contains(&rho)) {
            return Err(domain(format!(
                "worth {rho} pcm outside [{}, 0]",
                -self.total_worth
            )));
        }
        if self.shape == WorthShape::Linear {
            return Ok(self.travel() * (1.0 + rho / self.total_worth));
        }
        let (mut lo, mut hi) = (0.0, self.travel());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.integral_unchecked(mid) < rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Integral reactivity of a bank at `position` (pcm, nonpositive).
pub fn bank_reactivity(worth: &WorthCurve, position: f64) -> Result<f64> {
    if !worth.contains(position) {
        return Err(domain(format!(
            "bank position {position} outside [0, {}]",
            worth.travel_steps
        )));
    }
    Ok(worth.integral_unchecked(position))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RodBankConfig {
    pub init_position: f64,
    pub worth: WorthCurve,
}

impl RodBankConfig {
    pub fn new(init_position: f64) -> Self {
        Self {
            init_position,
            worth: WorthCurve::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.worth.validate()?;
        if !self.worth.contains(self.init_position) {
            return Err(domain(format!(
                "initial bank position {} outside [0, {}]",
                self.init_position, self.worth.travel_steps
            )));
        }
        Ok(())
    }

    /// Reactivity change (pcm) from moving the bank from its initial position
    /// to `position`.
    pub fn relative_worth(&self, position: f64) -> Result<f64> {
        Ok(bank_reactivity(&self.worth, position)? - bank_reactivity(&self.worth, self.init_position)?)
    }

    /// Reachable range of relative worth: `(full insertion, full withdrawal)`.
    pub fn reach(&self) -> (f64, f64) {
        let here = self.worth.integral_unchecked(self.init_position);
        let lo = self.worth.integral_unchecked(0.0) - here;
        let hi = self.worth.integral_unchecked(self.worth.travel()) - here;
        (lo, hi)
    }

    /// Position realizing a relative worth change of `delta_rho` pcm.
    pub fn position_for_relative(&self, delta_rho: f64) -> Result<f64> {
        let here = self.worth.integral_unchecked(self.init_position);
        self.worth.position_for(here + delta_rho)
    }
}
