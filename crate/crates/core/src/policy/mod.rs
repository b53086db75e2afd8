//! Policy backends behind one proposal interface.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::ControlVector;
use crate::scenario::Scenario;

mod external;
mod knn;
mod loopback;
mod proportional;
pub mod wire;

pub use external::{ExternalPolicy, FrameStats, SessionConfig, Transport};
pub use knn::{knn_propose, KnnPolicy};
pub use loopback::{serve_stream, FaultKind, FaultPlan, LoopbackServer, Responder};
pub use proportional::{calibrate_proportional, Calibration, CalibrationPoint, ProportionalConfig, ProportionalPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalRequest {
    pub id: u64,
    pub p_init: f64,
    pub p_target_delta: f64,
    pub window: Option<f64>,
}

/// Why a policy produced no control vector.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProposalFailure {
    #[error("malformed response: {0}")]
    Parse(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("policy error: {0}")]
    Policy(String),
}

pub trait Policy: Sync {
    fn name(&self) -> &str;
    fn propose(&self, req: &ProposalRequest) -> Result<ControlVector, ProposalFailure>;
}

/// Returns each scenario's own labeled vector.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    table: HashMap<u64, ControlVector>,
}

impl OraclePolicy {
    pub fn new(scenarios: &[Scenario]) -> Self {
        Self {
            table: scenarios.iter().map(|s| (s.id, s.control)).collect(),
        }
    }

    pub fn lookup(&self, id: u64) -> Option<&ControlVector> {
        self.table.get(&id)
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn propose(&self, req: &ProposalRequest) -> Result<ControlVector, ProposalFailure> {
        self.lookup(req.id)
            .copied()
            .ok_or_else(|| ProposalFailure::Policy(format!("unknown scenario id {}", req.id)))
    }
}

/// Never moves a rod.
#[derive(Debug, Clone, Copy)]
pub struct NullPolicy {
    pub init: (f64, f64),
}

impl Policy for NullPolicy {
    fn name(&self) -> &str {
        "null"
    }

    fn propose(&self, _req: &ProposalRequest) -> Result<ControlVector, ProposalFailure> {
        Ok(ControlVector::hold(self.init))
    }
}

/// Adapts a closure into a policy.
pub struct FnPolicy<F> {
    name: String,
    f: F,
}

impl<F> FnPolicy<F>
where
    F: Fn(&ProposalRequest) -> Result<ControlVector, ProposalFailure> + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&ProposalRequest) -> Result<ControlVector, ProposalFailure> + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn propose(&self, req: &ProposalRequest) -> Result<ControlVector, ProposalFailure> {
        (self.f)(req)
    }
}
