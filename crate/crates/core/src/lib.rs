//! Deterministic closed-loop validation of reactor rod-control policies.
//!
//! A point-kinetics core with two rod banks executes six-parameter rod
//! commands; corpora of labeled scenarios are generated by a
//! forward-simulation oracle; policies are scored by the power the reactor
//! actually reaches.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Two-bank loops index several parallel arrays.
#![allow(clippy::needless_range_loop)]

pub mod actuation;
pub mod error;
pub mod execution;
pub mod kinetics;
pub mod metrics;
pub mod policy;
pub mod scenario;
pub mod seed;

pub use actuation::{ActuationFamily, ControlVector};
pub use error::{Error, Result};
pub use execution::{batch_validate, execute_one, RunConfig, RunResult, ValidationReport};
pub use kinetics::Engine;
pub use scenario::{Corpus, Regime, Scenario};
