//! Nearest-neighbor table lookup on the target power change.

use super::{Policy, ProposalFailure, ProposalRequest};
use crate::actuation::ControlVector;
use crate::error::{domain, Result};
use crate::scenario::Scenario;

/// Control vector of the scenario whose delta is nearest the query, by a
/// linear scan. Ties go to the lowest id. Only `k = 1` is supported.
pub fn knn_propose(delta: f64, corpus: &[Scenario], k: usize) -> Result<ControlVector> {
    if k != 1 {
        return Err(domain(format!("only k = 1 is supported, got {k}")));
    }
    corpus
        .iter()
        .min_by(|a, b| {
            let da = (a.p_target_delta - delta).abs();
            let db = (b.p_target_delta - delta).abs();
            da.total_cmp(&db).then(a.id.cmp(&b.id))
        })
        .map(|s| s.control)
        .ok_or_else(|| domain("nearest-neighbor lookup over an empty corpus"))
}

/// Sorted-table form of [`knn_propose`] with identical answers.
#[derive(Debug, Clone)]
pub struct KnnPolicy {
    /// `(delta, id, control)` ordered by delta, then id.
    table: Vec<(f64, u64, ControlVector)>,
}

impl KnnPolicy {
    pub fn new(corpus: &[Scenario]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(domain("nearest-neighbor table needs at least one scenario"));
        }
        let mut table: Vec<_> = corpus.iter().map(|s| (s.p_target_delta, s.id, s.control)).collect();
        table.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(Self { table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn nearest(&self, delta: f64) -> &ControlVector {
        let t = &self.table;
        let idx = t.partition_point(|e| e.0 < delta);
        // Closest delta lies at the start of the run at idx or the run just before.
        let mut candidates = Vec::with_capacity(2);
        if idx < t.len() {
            candidates.push(idx);
        }
        if idx > 0 {
            let d = t[idx - 1].0;
            candidates.push(t.partition_point(|e| e.0 < d));
        }
        let best = candidates
            .into_iter()
            .min_by(|&a, &b| {
                let da = (t[a].0 - delta).abs();
                let db = (t[b].0 - delta).abs();
                da.total_cmp(&db).then(t[a].1.cmp(&t[b].1))
            })
            .expect("table nonempty");
        &t[best].2
    }
}

impl Policy for KnnPolicy {
    fn name(&self) -> &str {
        "knn"
    }

    fn propose(&self, req: &ProposalRequest) -> Result<ControlVector, ProposalFailure> {
        Ok(*self.nearest(req.p_target_delta))
    }
}
