//! The six-parameter rod command, its eight-number text schema, actuator
//! limit checks, actuation-family classification and bank motion plans.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{domain, Result};
use crate::kinetics::TRAVEL_STEPS;

/// A bank counts as moving when its target differs from its initial
/// position by at least this many steps.
pub const MOVE_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    pub b1_pos: f64,
    pub b1_time: f64,
    pub b1_speed: f64,
    pub b2_pos: f64,
    pub b2_time: f64,
    pub b2_speed: f64,
}

/// Target, start time and speed for one bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankCommand {
    pub pos: f64,
    pub time: f64,
    pub speed: f64,
}

impl ControlVector {
    pub fn from_banks(b1: BankCommand, b2: BankCommand) -> Self {
        Self {
            b1_pos: b1.pos,
            b1_time: b1.time,
            b1_speed: b1.speed,
            b2_pos: b2.pos,
            b2_time: b2.time,
            b2_speed: b2.speed,
        }
    }

    /// A command that leaves both banks where they start.
    pub fn hold(init: (f64, f64)) -> Self {
        let keep = |pos| BankCommand {
            pos,
            time: 0.0,
            speed: 1.0,
        };
        Self::from_banks(keep(init.0), keep(init.1))
    }

    pub fn bank(&self, index: usize) -> BankCommand {
        match index {
            0 => BankCommand {
                pos: self.b1_pos,
                time: self.b1_time,
                speed: self.b1_speed,
            },
            1 => BankCommand {
                pos: self.b2_pos,
                time: self.b2_time,
                speed: self.b2_speed,
            },
            _ => panic!("bank index {index} out of range"),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.b1_pos,
            self.b1_time,
            self.b1_speed,
            self.b2_pos,
            self.b2_time,
            self.b2_speed,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            b1_pos: v[0],
            b1_time: v[1],
            b1_speed: v[2],
            b2_pos: v[3],
            b2_time: v[4],
            b2_speed: v[5],
        }
    }

    /// Every field rounded to the schema's six significant digits, so the
    /// vector survives a serialize/parse round trip unchanged.
    pub fn quantized(&self) -> Self {
        Self::from_array(self.to_array().map(round_sig6))
    }
}

pub const FIELD_NAMES: [&str; 6] = ["b1_pos", "b1_time", "b1_speed", "b2_pos", "b2_time", "b2_speed"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("{field} is not finite")]
    NonFinite { field: &'static str },
    #[error("{field} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("{field} = {value} must be positive for a moving bank")]
    NonPositiveSpeed { field: &'static str, value: f64 },
}

fn moves(target: f64, init: f64) -> bool {
    (target - init).abs() >= MOVE_THRESHOLD
}

/// Checks a command against actuator limits. Returns every violation found.
pub fn validate(cv: &ControlVector, init: (f64, f64)) -> std::result::Result<ControlVector, Vec<Violation>> {
    let travel = f64::from(TRAVEL_STEPS);
    let mut out = Vec::new();
    let vals = cv.to_array();
    for (i, &v) in vals.iter().enumerate() {
        if !v.is_finite() {
            out.push(Violation::NonFinite { field: FIELD_NAMES[i] });
        }
    }
    let inits = [init.0, init.1];
    for bank in 0..2 {
        let (pos, time, speed) = (vals[3 * bank], vals[3 * bank + 1], vals[3 * bank + 2]);
        if pos.is_finite() && !(0.0..=travel).contains(&pos) {
            out.push(Violation::OutOfRange {
                field: FIELD_NAMES[3 * bank],
                value: pos,
                lo: 0.0,
                hi: travel,
            });
        }
        if time.is_finite() && time < 0.0 {
            out.push(Violation::OutOfRange {
                field: FIELD_NAMES[3 * bank + 1],
                value: time,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if pos.is_finite() && speed.is_finite() && moves(pos, inits[bank]) && speed <= 0.0 {
            out.push(Violation::NonPositiveSpeed {
                field: FIELD_NAMES[3 * bank + 2],
                value: speed,
            });
        }
    }
    if out.is_empty() {
        Ok(*cv)
    } else {
        Err(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuationFamily {
    SingleB1,
    SingleB2,
    Simultaneous,
    Sequential,
}

impl ActuationFamily {
    pub const ALL: [ActuationFamily; 4] = [
        ActuationFamily::SingleB1,
        ActuationFamily::SingleB2,
        ActuationFamily::Simultaneous,
        ActuationFamily::Sequential,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActuationFamily::SingleB1 => "single_b1",
            ActuationFamily::SingleB2 => "single_b2",
            ActuationFamily::Simultaneous => "simultaneous",
            ActuationFamily::Sequential => "sequential",
        }
    }

    pub fn two_bank(self) -> bool {
        matches!(self, ActuationFamily::Simultaneous | ActuationFamily::Sequential)
    }
}

impl fmt::Display for ActuationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ActuationFamily {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        ActuationFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| domain(format!("unknown actuation family '{s}'")))
    }
}

/// True when neither bank moves. Such a command is reported as `single_b2`.
pub fn is_null_motion(cv: &ControlVector, init: (f64, f64)) -> bool {
    !moves(cv.b1_pos, init.0) && !moves(cv.b2_pos, init.1)
}

pub fn classify(cv: &ControlVector, init: (f64, f64)) -> ActuationFamily {
    match (moves(cv.b1_pos, init.0), moves(cv.b2_pos, init.1)) {
        (true, false) => ActuationFamily::SingleB1,
        (false, true) | (false, false) => ActuationFamily::SingleB2,
        (true, true) if cv.b1_time == cv.b2_time => ActuationFamily::Simultaneous,
        (true, true) => ActuationFamily::Sequential,
    }
}

/// Piecewise-linear position of one bank: hold, ramp at `speed`, hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankMotion {
    pub init: f64,
    pub target: f64,
    pub start: f64,
    pub speed: f64,
    pub arrival: f64,
}

impl BankMotion {
    fn new(init: f64, cmd: BankCommand) -> Self {
        // A bank commanded with zero speed cannot leave its initial position.
        let target = if cmd.speed > 0.0 { cmd.pos } else { init };
        let arrival = if target == init {
            cmd.time
        } else {
            cmd.time + (target - init).abs() / cmd.speed
        };
        Self {
            init,
            target,
            start: cmd.time,
            speed: cmd.speed,
            arrival,
        }
    }

    #[inline]
    pub fn position(&self, t: f64) -> f64 {
        if t <= self.start {
            self.init
        } else if t >= self.arrival {
            self.target
        } else {
            let travelled = self.speed * (t - self.start);
            if self.target > self.init {
                (self.init + travelled).min(self.target)
            } else {
                (self.init - travelled).max(self.target)
            }
        }
    }

    pub fn is_static(&self) -> bool {
        self.target == self.init
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionPlan {
    pub banks: [BankMotion; 2],
}

impl MotionPlan {
    pub fn positions(&self, t: f64) -> [f64; 2] {
        [self.banks[0].position(t), self.banks[1].position(t)]
    }

    /// Time after which both banks are at rest.
    pub fn settle_time(&self) -> f64 {
        self.banks[0].arrival.max(self.banks[1].arrival)
    }

    /// Time before which both banks are at their initial positions.
    pub fn first_motion(&self) -> f64 {
        self.banks
            .iter()
            .filter(|b| !b.is_static())
            .map(|b| b.start)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn plan_motion(cv: &ControlVector, init: (f64, f64)) -> MotionPlan {
    MotionPlan {
        banks: [BankMotion::new(init.0, cv.bank(0)), BankMotion::new(init.1, cv.bank(1))],
    }
}

/// An eight-number record: initial power, target fractional change, command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemaRecord {
    pub p_init: f64,
    pub p_target: f64,
    pub control: ControlVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("expected 8 numbers, found {found}")]
    TokenCount { found: usize },
    #[error("token {index} ('{token}') is not a number")]
    NonNumeric { index: usize, token: String },
    #[error("token {index} is not finite")]
    NonFinite { index: usize },
}

pub fn parse_schema(text: &str) -> std::result::Result<SchemaRecord, ParseError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != 8 {
        return Err(ParseError::TokenCount { found: tokens.len() });
    }
    let mut v = [0.0; 8];
    for (i, tok) in tokens.iter().enumerate() {
        let x: f64 = tok.parse().map_err(|_| ParseError::NonNumeric {
            index: i,
            token: (*tok).to_string(),
        })?;
        if !x.is_finite() {
            return Err(ParseError::NonFinite { index: i });
        }
        v[i] = x;
    }
    Ok(SchemaRecord {
        p_init: v[0],
        p_target: v[1],
        control: ControlVector::from_array([v[2], v[3], v[4], v[5], v[6], v[7]]),
    })
}

pub fn serialize_schema(p_init: f64, p_target: f64, cv: &ControlVector) -> String {
    let mut out = String::new();
    for (i, x) in [p_init, p_target].into_iter().chain(cv.to_array()).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&fmt_sig6(x));
    }
    out
}

/// Rounds to six significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.5e}").parse().expect("scientific format parses")
}

/// Shortest decimal text for `x` after rounding to six significant digits.
pub fn fmt_sig6(x: f64) -> String {
    format!("{}", round_sig6(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PyrkVector {
    /// Net reactivity insertion (pcm).
    pub rho_insert: f64,
    /// Ramp duration (s).
    pub duration: f64,
}

impl PyrkVector {
    pub fn validate(&self) -> Result<()> {
        if !self.rho_insert.is_finite() {
            return Err(domain("reactivity insertion must be finite"));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(domain(format!("duration must be positive, got {}", self.duration)));
        }
        Ok(())
    }
}
