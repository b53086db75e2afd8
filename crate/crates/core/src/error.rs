use thiserror::Error;

use crate::actuation::{ParseError, Violation};

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration diverged at t = {time:.6} s (power = {power})")]
    Diverged { time: f64, power: f64 },

    #[error("invalid control vector: {}", format_violations(.0))]
    InvalidControl(Vec<Violation>),

    #[error("schema parse error: {0}")]
    Parse(#[from] ParseError),

    #[error("infeasible target: {0}")]
    Infeasible(String),

    #[error("corpus generation failed: {0}")]
    Generation(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("corpus load error at line {line}: {reason}")]
    Load { line: usize, reason: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("batch aborted: {0}")]
    BatchAborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
