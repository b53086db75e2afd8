//! Single-gain proportional baseline: power error maps linearly to a bank 2
//! displacement, with insertion that bank 2 cannot absorb spilling onto
//! bank 1.

use serde::{Deserialize, Serialize};

use super::{Policy, ProposalFailure, ProposalRequest};
use crate::actuation::{BankCommand, ControlVector};
use crate::error::{Error, Result};
use crate::execution::{simulate_terminal_power, RunConfig};
use crate::kinetics::Engine;

pub const DEFAULT_ROD_SPEED: f64 = 2.0;
pub const CALIBRATION_DELTAS: [f64; 6] = [-0.30, -0.20, -0.10, 0.10, 0.20, 0.30];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub delta: f64,
    /// Bank 2 displacement in steps (positive is withdrawal).
    pub displacement: f64,
    /// Set when the target lies beyond bank 2's travel and the end stop was used.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub points: Vec<CalibrationPoint>,
    pub gain: f64,
    /// Root-mean-square of `displacement - gain * delta` over the points.
    pub residual_rms: f64,
}

impl Calibration {
    /// Least-squares slope through the origin of the given points.
    pub fn fit(points: Vec<CalibrationPoint>) -> Result<Self> {
        let sxx: f64 = points.iter().map(|p| p.delta * p.delta).sum();
        if !(sxx > 0.0) {
            return Err(Error::Calibration("no nonzero calibration deltas".into()));
        }
        let sxy: f64 = points.iter().map(|p| p.delta * p.displacement).sum();
        let gain = sxy / sxx;
        let ss: f64 = points
            .iter()
            .map(|p| (p.displacement - gain * p.delta).powi(2))
            .sum();
        Ok(Self {
            residual_rms: (ss / points.len() as f64).sqrt(),
            gain,
            points,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionalConfig {
    /// Steps per unit fractional power change.
    pub gain: f64,
    pub rod_speed: f64,
    pub calibration: Option<Calibration>,
}

impl ProportionalConfig {
    pub fn with_gain(gain: f64) -> Self {
        Self {
            gain,
            rod_speed: DEFAULT_ROD_SPEED,
            calibration: None,
        }
    }

    /// Bank 2 moves by `gain * delta` from its start, clamped to travel;
    /// insertion left over after the clamp goes to bank 1. Withdrawal demand
    /// beyond bank 2's top stop is dropped.
    pub fn propose(&self, delta: f64, init: (f64, f64), travel: f64) -> ControlVector {
        let want = init.1 + self.gain * delta;
        let b2 = want.clamp(0.0, travel);
        let residual = want - b2;
        let b1 = if residual < 0.0 {
            (init.0 + residual).clamp(0.0, travel)
        } else {
            init.0
        };
        let cmd = |pos| BankCommand {
            pos,
            time: 0.0,
            speed: self.rod_speed,
        };
        ControlVector::from_banks(cmd(b1), cmd(b2)).quantized()
    }
}

pub struct ProportionalPolicy {
    pub config: ProportionalConfig,
    init: (f64, f64),
    travel: f64,
}

impl ProportionalPolicy {
    pub fn new(config: ProportionalConfig, engine: &Engine) -> Self {
        Self {
            config,
            init: engine.init_positions(),
            travel: engine.banks[1].worth.travel(),
        }
    }
}

impl Policy for ProportionalPolicy {
    fn name(&self) -> &str {
        "proportional"
    }

    fn propose(&self, req: &ProposalRequest) -> Result<ControlVector, ProposalFailure> {
        Ok(self.config.propose(req.p_target_delta, self.init, self.travel))
    }
}

const BISECTION_TOL_STEPS: f64 = 1e-3;

/// Finds bank 2 displacements for the six calibration deltas by bisection
/// on the executed outcome and fits the gain.
pub fn calibrate_proportional(engine: &Engine, cfg: &RunConfig) -> Result<ProportionalConfig> {
    cfg.validate()?;
    let init = engine.init_positions();
    let travel = engine.banks[1].worth.travel();
    let run = |d: f64, delta: f64| -> Result<f64> {
        let cv = ControlVector::from_banks(
            BankCommand {
                pos: init.0,
                time: 0.0,
                speed: DEFAULT_ROD_SPEED,
            },
            BankCommand {
                pos: init.1 + d,
                time: 0.0,
                speed: DEFAULT_ROD_SPEED,
            },
        );
        Ok(simulate_terminal_power(engine, &cv, cfg, cfg.horizon)? - (1.0 + delta))
    };

    let mut points = Vec::with_capacity(CALIBRATION_DELTAS.len());
    for &delta in &CALIBRATION_DELTAS {
        let stop = if delta < 0.0 { -init.1 } else { travel - init.1 };
        let g0 = run(0.0, delta)?;
        if g0 * delta >= 0.0 {
            return Err(Error::Calibration(format!(
                "no displacement brackets delta {delta}: zero motion already overshoots"
            )));
        }
        let g_stop = run(stop, delta)?;
        if (g_stop < 0.0) == (g0 < 0.0) {
            points.push(CalibrationPoint {
                delta,
                displacement: stop,
                saturated: true,
            });
            continue;
        }
        let (mut a, mut b) = (0.0, stop);
        let mut ga = g0;
        while (b - a).abs() > BISECTION_TOL_STEPS {
            let m = 0.5 * (a + b);
            let gm = run(m, delta)?;
            if (gm < 0.0) == (ga < 0.0) {
                a = m;
                ga = gm;
            } else {
                b = m;
            }
        }
        points.push(CalibrationPoint {
            delta,
            displacement: 0.5 * (a + b),
            saturated: false,
        });
    }
    let calibration = Calibration::fit(points)?;
    Ok(ProportionalConfig {
        gain: calibration.gain,
        rod_speed: DEFAULT_ROD_SPEED,
        calibration: Some(calibration),
    })
}
