//! Closed-loop execution: one isolated run per proposal, scored by the
//! power the reactor actually reaches.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuation::{classify, plan_motion, validate, ActuationFamily, ControlVector, MotionPlan, PyrkVector};
use crate::error::{domain, Error, Result};
use crate::kinetics::{integrate_terminal, pyrk_mode_trace, steady_state_init, Engine, ReactivitySource};
use crate::metrics::{
    failure_concentration, kl_divergence, mean, policy_entropy, population_variance, quantile, stratify_by_regime,
    PolicyDistribution, RegimeRow,
};
use crate::policy::{Policy, ProposalFailure, ProposalRequest};
use crate::scenario::{PyrkScenario, Regime, Scenario};
use crate::seed::{child_seed, rng_for};

/// Where the achieved power is read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WindowMode {
    #[default]
    Horizon,
    Fixed { at: f64 },
    /// Per-run time drawn uniformly from `[lo, hi]`, keyed by scenario id.
    Uniform { lo: f64, hi: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub window: WindowMode,
    pub tolerance_bands: Vec<f64>,
    pub severe_threshold: f64,
}

pub const DEFAULT_BANDS: [f64; 5] = [1.0, 2.0, 3.0, 5.0, 10.0];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: 200.0,
            dt: 1e-3,
            window: WindowMode::Horizon,
            tolerance_bands: DEFAULT_BANDS.to_vec(),
            severe_threshold: 10.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(domain(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(domain(format!("time step must be in (0, horizon], got {}", self.dt)));
        }
        let b = &self.tolerance_bands;
        if b.is_empty() || b.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(domain("tolerance bands must be nonempty and positive"));
        }
        if b.windows(2).any(|w| w[0] >= w[1]) {
            return Err(domain("tolerance bands must be strictly increasing"));
        }
        let max = *b.last().expect("nonempty");
        if !(b.contains(&self.severe_threshold) || self.severe_threshold > max) {
            return Err(domain(format!(
                "severe threshold {} must be a band or exceed the widest band",
                self.severe_threshold
            )));
        }
        match self.window {
            WindowMode::Horizon => {}
            WindowMode::Fixed { at } => {
                if !(at > 0.0 && at <= self.horizon) {
                    return Err(domain(format!("window {at} s outside (0, horizon]")));
                }
            }
            WindowMode::Uniform { lo, hi, .. } => {
                if !(lo > 0.0 && lo <= hi && hi <= self.horizon) {
                    return Err(domain(format!("window range [{lo}, {hi}] outside (0, horizon]")));
                }
            }
        }
        Ok(())
    }

    pub fn eval_time(&self, id: u64) -> f64 {
        match self.window {
            WindowMode::Horizon => self.horizon,
            WindowMode::Fixed { at } => at,
            WindowMode::Uniform { lo, hi, seed } => {
                if hi > lo {
                    rng_for(child_seed(seed, id)).gen_range(lo..=hi)
                } else {
                    lo
                }
            }
        }
    }

    /// Window passed to policies, when one is configured.
    pub fn request_window(&self, id: u64) -> Option<f64> {
        match self.window {
            WindowMode::Horizon => None,
            _ => Some(self.eval_time(id)),
        }
    }
}

/// Rod-driven reactivity with the constant segments before the first move
/// and after settling computed once.
struct RodDrive<'a> {
    engine: &'a Engine,
    plan: MotionPlan,
    first: f64,
    settle: f64,
    before: f64,
    after: f64,
}

impl<'a> RodDrive<'a> {
    fn new(engine: &'a Engine, plan: MotionPlan) -> Self {
        let before = engine.rod_reactivity_unchecked(plan.positions(f64::NEG_INFINITY));
        let after = engine.rod_reactivity_unchecked(plan.positions(f64::INFINITY));
        Self {
            engine,
            first: plan.first_motion(),
            settle: plan.settle_time(),
            plan,
            before,
            after,
        }
    }
}

impl ReactivitySource for RodDrive<'_> {
    #[inline]
    fn rho(&self, t: f64) -> f64 {
        if t <= self.first {
            self.before
        } else if t >= self.settle {
            self.after
        } else {
            self.engine.rod_reactivity_unchecked(self.plan.positions(t))
        }
    }
}

/// Normalized power at `t_eval` after executing `cv` from the critical
/// initial state.
pub fn simulate_terminal_power(engine: &Engine, cv: &ControlVector, cfg: &RunConfig, t_eval: f64) -> Result<f64> {
    let init = engine.init_positions();
    let cv = validate(cv, init).map_err(Error::InvalidControl)?;
    let state = steady_state_init(&engine.params, 1.0)?;
    let drive = RodDrive::new(engine, plan_motion(&cv, init));
    Ok(integrate_terminal(&state, &engine.params, &drive, t_eval, cfg.dt)?.power)
}

pub fn simulate_pyrk_power(engine: &Engine, v: &PyrkVector, cfg: &RunConfig, t_eval: f64) -> Result<f64> {
    v.validate()?;
    let state = steady_state_init(&engine.params, 1.0)?;
    let trace = pyrk_mode_trace(v.rho_insert, v.duration, t_eval)?;
    Ok(integrate_terminal(&state, &engine.params, &trace, t_eval, cfg.dt)?.power)
}

/// What a run is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTarget {
    pub id: u64,
    pub p_init: f64,
    pub p_target_delta: f64,
}

impl ScenarioTarget {
    pub fn target_power(&self) -> f64 {
        self.p_init * (1.0 + self.p_target_delta)
    }
}

impl From<&Scenario> for ScenarioTarget {
    fn from(s: &Scenario) -> Self {
        Self {
            id: s.id,
            p_init: s.p_init,
            p_target_delta: s.p_target_delta,
        }
    }
}

impl From<&PyrkScenario> for ScenarioTarget {
    fn from(s: &PyrkScenario) -> Self {
        Self {
            id: s.id,
            p_init: s.p_init,
            p_target_delta: s.p_target_delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    InvalidProposal,
    Diverged,
    Parse,
    Timeout,
    Transport,
    Policy,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario_id: u64,
    pub p_init: f64,
    pub p_target_delta: f64,
    pub eval_time: f64,
    pub achieved_power: Option<f64>,
    /// Percent error; infinite (written as null) when no power was produced.
    #[serde(with = "inf_as_null")]
    pub error_pct: f64,
    pub band_success: Vec<bool>,
    pub severe_failure: bool,
    pub family_executed: Option<ActuationFamily>,
    pub proposal_valid: bool,
    pub parse_ok: bool,
    pub failure: Option<FailureKind>,
    pub detail: Option<String>,
}

impl RunResult {
    fn scored(target: &ScenarioTarget, eval_time: f64, achieved: f64, cfg: &RunConfig) -> Self {
        let goal = target.target_power();
        let error_pct = ((achieved - goal) / goal).abs() * 100.0;
        Self {
            scenario_id: target.id,
            p_init: target.p_init,
            p_target_delta: target.p_target_delta,
            eval_time,
            achieved_power: Some(achieved),
            error_pct,
            band_success: cfg.tolerance_bands.iter().map(|&b| error_pct <= b).collect(),
            severe_failure: error_pct > cfg.severe_threshold,
            family_executed: None,
            proposal_valid: true,
            parse_ok: true,
            failure: None,
            detail: None,
        }
    }

    fn failed(target: &ScenarioTarget, eval_time: f64, kind: FailureKind, detail: String, cfg: &RunConfig) -> Self {
        let parse_ok = !matches!(kind, FailureKind::Parse | FailureKind::Timeout | FailureKind::Transport);
        Self {
            scenario_id: target.id,
            p_init: target.p_init,
            p_target_delta: target.p_target_delta,
            eval_time,
            achieved_power: None,
            error_pct: f64::INFINITY,
            band_success: vec![false; cfg.tolerance_bands.len()],
            severe_failure: true,
            family_executed: None,
            proposal_valid: matches!(kind, FailureKind::Diverged),
            parse_ok,
            failure: Some(kind),
            detail: Some(detail),
        }
    }

    /// A scored result with a given error, for exercising metrics.
    pub fn synthetic(id: u64, delta: f64, error_pct: f64, bands: &[f64], severe_threshold: f64) -> Self {
        let finite = error_pct.is_finite();
        Self {
            scenario_id: id,
            p_init: 1.0,
            p_target_delta: delta,
            eval_time: 0.0,
            achieved_power: finite.then(|| (1.0 + delta) * (1.0 + error_pct / 100.0)),
            error_pct,
            band_success: bands.iter().map(|&b| error_pct <= b).collect(),
            severe_failure: error_pct > severe_threshold,
            family_executed: finite.then_some(ActuationFamily::SingleB2),
            proposal_valid: finite,
            parse_ok: true,
            failure: (!finite).then_some(FailureKind::InvalidProposal),
            detail: None,
        }
    }
}

/// Executes `cv` in a fresh reactor and scores it against `target`.
pub fn execute_one(target: &ScenarioTarget, cv: &ControlVector, cfg: &RunConfig, engine: &Engine) -> RunResult {
    let t_eval = cfg.eval_time(target.id);
    let init = engine.init_positions();
    let cv = match validate(cv, init) {
        Ok(cv) => cv,
        Err(v) => {
            let detail = Error::InvalidControl(v).to_string();
            return RunResult::failed(target, t_eval, FailureKind::InvalidProposal, detail, cfg);
        }
    };
    let family = classify(&cv, init);
    match simulate_terminal_power(engine, &cv, cfg, t_eval) {
        Ok(p) => {
            let mut r = RunResult::scored(target, t_eval, target.p_init * p, cfg);
            r.family_executed = Some(family);
            r
        }
        Err(e) => {
            let mut r = RunResult::failed(target, t_eval, FailureKind::Diverged, e.to_string(), cfg);
            r.family_executed = Some(family);
            r
        }
    }
}

pub fn execute_pyrk(scenario: &PyrkScenario, vector: &PyrkVector, cfg: &RunConfig, engine: &Engine) -> RunResult {
    let target = ScenarioTarget::from(scenario);
    let t_eval = cfg.eval_time(target.id);
    if let Err(e) = vector.validate() {
        return RunResult::failed(&target, t_eval, FailureKind::InvalidProposal, e.to_string(), cfg);
    }
    match simulate_pyrk_power(engine, vector, cfg, t_eval) {
        Ok(p) => RunResult::scored(&target, t_eval, target.p_init * p, cfg),
        Err(e) => RunResult::failed(&target, t_eval, FailureKind::Diverged, e.to_string(), cfg),
    }
}

fn failure_result(target: &ScenarioTarget, cfg: &RunConfig, f: ProposalFailure) -> RunResult {
    let t_eval = cfg.eval_time(target.id);
    let (kind, detail) = match f {
        ProposalFailure::Parse(m) => (FailureKind::Parse, m),
        ProposalFailure::Timeout(m) => (FailureKind::Timeout, m),
        ProposalFailure::Transport(m) => (FailureKind::Transport, m),
        ProposalFailure::Policy(m) => (FailureKind::Policy, m),
    };
    RunResult::failed(target, t_eval, kind, detail, cfg)
}

fn in_pool<T: Send>(parallelism: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if parallelism == 0 {
        return Err(domain("parallelism must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| domain(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs every target once through `policy` and aggregates the outcomes.
/// Results keep the order of `targets` regardless of `parallelism`.
pub fn batch_validate(
    policy: &dyn Policy,
    targets: &[ScenarioTarget],
    cfg: &RunConfig,
    engine: &Engine,
    parallelism: usize,
    source: &str,
) -> Result<ValidationReport> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(domain("batch has no scenarios"));
    }
    let results: Vec<RunResult> = in_pool(parallelism, || {
        targets
            .par_iter()
            .map(|t| {
                let req = ProposalRequest {
                    id: t.id,
                    p_init: t.p_init,
                    p_target_delta: t.p_target_delta,
                    window: cfg.request_window(t.id),
                };
                match policy.propose(&req) {
                    Ok(cv) => execute_one(t, &cv, cfg, engine),
                    Err(f) => failure_result(t, cfg, f),
                }
            })
            .collect()
    })?;
    let transport = results
        .iter()
        .filter(|r| matches!(r.failure, Some(FailureKind::Timeout | FailureKind::Transport)))
        .count();
    if 2 * transport > results.len() {
        let first = results
            .iter()
            .find_map(|r| r.detail.as_deref().filter(|_| r.failure.is_some()))
            .unwrap_or("");
        return Err(Error::BatchAborted(format!(
            "{transport} of {} runs failed in transport or timed out; first failure: {first}",
            results.len()
        )));
    }
    ValidationReport::build(source, policy.name(), engine, cfg, results)
}

/// Replays ramp-mode scenarios with their own vectors.
pub fn batch_replay_pyrk(
    scenarios: &[PyrkScenario],
    cfg: &RunConfig,
    engine: &Engine,
    parallelism: usize,
    source: &str,
) -> Result<ValidationReport> {
    cfg.validate()?;
    if scenarios.is_empty() {
        return Err(domain("batch has no scenarios"));
    }
    let results = in_pool(parallelism, || {
        scenarios
            .par_iter()
            .map(|s| execute_pyrk(s, &s.vector, cfg, engine))
            .collect()
    })?;
    ValidationReport::build(source, "ramp_replay", engine, cfg, results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub band_pct: f64,
    pub successes: usize,
    pub failures: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRow {
    pub family: ActuationFamily,
    pub attempts: usize,
    pub successes: Vec<usize>,
    pub severe: usize,
}

/// Runs whose proposal never executed, so no family applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnclassifiedRow {
    pub attempts: usize,
    pub severe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSummary {
    pub parse_ok: usize,
    pub parse_rate: f64,
    pub valid: usize,
    pub invalid: usize,
    pub diverged: usize,
    pub parse_errors: usize,
    pub timeouts: usize,
    pub transport_errors: usize,
    pub policy_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub finite: usize,
    pub excluded: usize,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub q50: Option<f64>,
    pub q95: Option<f64>,
    pub q99: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub source: String,
    pub policy: String,
    pub engine_fingerprint: String,
    pub config: RunConfig,
    /// Named digests of the inputs the batch was built from.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    pub runs: usize,
    pub bands: Vec<BandRow>,
    /// Absent when some target lies outside the regime bins.
    pub regimes: Option<Vec<RegimeRow>>,
    pub families: Vec<FamilyRow>,
    pub unclassified: UnclassifiedRow,
    pub severe_failures: usize,
    pub failure_concentration: Option<f64>,
    /// Share of executed proposals per family.
    pub runtime_distribution: Option<[f64; 4]>,
    pub kl_to_training: Option<f64>,
    pub policy_entropy: Option<f64>,
    pub proposals: ProposalSummary,
    pub errors: ErrorSummary,
    pub results: Vec<RunResult>,
}

impl ValidationReport {
    pub fn build(
        source: &str,
        policy: &str,
        engine: &Engine,
        cfg: &RunConfig,
        results: Vec<RunResult>,
    ) -> Result<Self> {
        let n = results.len();
        let bands: Vec<BandRow> = cfg
            .tolerance_bands
            .iter()
            .enumerate()
            .map(|(j, &band)| {
                let successes = results.iter().filter(|r| r.band_success[j]).count();
                BandRow {
                    band_pct: band,
                    successes,
                    failures: n - successes,
                    rate: successes as f64 / n as f64,
                }
            })
            .collect();

        let regimes = if results.iter().all(|r| Regime::of(r.p_target_delta).is_ok()) {
            Some(stratify_by_regime(&results, &cfg.tolerance_bands)?)
        } else {
            None
        };

        let mut families: Vec<FamilyRow> = ActuationFamily::ALL
            .iter()
            .map(|&family| FamilyRow {
                family,
                attempts: 0,
                successes: vec![0; cfg.tolerance_bands.len()],
                severe: 0,
            })
            .collect();
        let mut unclassified = UnclassifiedRow { attempts: 0, severe: 0 };
        for r in &results {
            match r.family_executed {
                Some(f) => {
                    let row = &mut families[f.index()];
                    row.attempts += 1;
                    row.severe += r.severe_failure as usize;
                    for (s, &ok) in row.successes.iter_mut().zip(&r.band_success) {
                        *s += ok as usize;
                    }
                }
                None => {
                    unclassified.attempts += 1;
                    unclassified.severe += r.severe_failure as usize;
                }
            }
        }
        let severe_failures = results.iter().filter(|r| r.severe_failure).count();
        let severe_by_family = [0, 1, 2, 3].map(|i| families[i].severe);
        let attempts_by_family = [0, 1, 2, 3].map(|i| families[i].attempts);
        let runtime = PolicyDistribution::from_counts(attempts_by_family);
        let kl_to_training = match &runtime {
            Some(p) => Some(kl_divergence(p, &PolicyDistribution::training_mixture())?),
            None => None,
        };

        let count = |k: FailureKind| results.iter().filter(|r| r.failure == Some(k)).count();
        let parse_ok = results.iter().filter(|r| r.parse_ok).count();
        let proposals = ProposalSummary {
            parse_ok,
            parse_rate: parse_ok as f64 / n as f64,
            valid: results.iter().filter(|r| r.proposal_valid).count(),
            invalid: count(FailureKind::InvalidProposal),
            diverged: count(FailureKind::Diverged),
            parse_errors: count(FailureKind::Parse),
            timeouts: count(FailureKind::Timeout),
            transport_errors: count(FailureKind::Transport),
            policy_errors: count(FailureKind::Policy),
        };

        let finite: Vec<f64> = results.iter().map(|r| r.error_pct).filter(|e| e.is_finite()).collect();
        let q = |level: f64| quantile(&finite, level).ok();
        let errors = ErrorSummary {
            finite: finite.len(),
            excluded: n - finite.len(),
            mean: mean(&finite),
            variance: population_variance(&finite),
            q50: q(0.5),
            q95: q(0.95),
            q99: q(0.99),
            max: finite.iter().copied().reduce(f64::max),
        };

        Ok(Self {
            source: source.into(),
            policy: policy.into(),
            engine_fingerprint: engine.fingerprint(),
            config: cfg.clone(),
            inputs: BTreeMap::new(),
            runs: n,
            bands,
            regimes,
            families,
            unclassified,
            severe_failures,
            failure_concentration: failure_concentration(severe_by_family),
            runtime_distribution: runtime.as_ref().map(|p| p.0),
            kl_to_training,
            policy_entropy: runtime.as_ref().map(policy_entropy),
            proposals,
            errors,
            results,
        })
    }

    pub fn rate_at(&self, band: f64) -> Option<f64> {
        self.bands.iter().find(|b| b.band_pct == band).map(|b| b.rate)
    }

    pub fn regime_rate(&self, regime: Regime, band: f64) -> Option<f64> {
        let j = self.bands.iter().position(|b| b.band_pct == band)?;
        let row = self.regimes.as_ref()?.get(regime.index())?;
        (row.runs > 0).then(|| row.rates[j])
    }

    /// Checks band monotonicity, count conservation and the severe-failure
    /// definition; returns the first violation found.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.results.len();
        if self.runs != n {
            return Err(format!("run count {} but {} results", self.runs, n));
        }
        for w in self.bands.windows(2) {
            if w[0].successes > w[1].successes {
                return Err(format!(
                    "success at ±{}% exceeds success at ±{}%",
                    w[0].band_pct, w[1].band_pct
                ));
            }
        }
        for b in &self.bands {
            if b.successes + b.failures != n {
                return Err(format!("band ±{}% does not account for every run", b.band_pct));
            }
        }
        let attempts: usize = self.families.iter().map(|f| f.attempts).sum::<usize>() + self.unclassified.attempts;
        if attempts != n {
            return Err(format!("family attempts sum to {attempts}, expected {n}"));
        }
        if let Some(rows) = &self.regimes {
            if rows.iter().map(|r| r.runs).sum::<usize>() != n {
                return Err("regime rows do not account for every run".into());
            }
        }
        let severe = self
            .results
            .iter()
            .filter(|r| r.error_pct > self.config.severe_threshold)
            .count();
        if severe != self.severe_failures {
            return Err(format!("severe count {} but {} errors exceed threshold", self.severe_failures, severe));
        }
        for r in &self.results {
            if r.band_success.windows(2).any(|w| w[0] && !w[1]) {
                return Err(format!("run {} is not band-monotone", r.scenario_id));
            }
            if r.severe_failure != (r.error_pct > self.config.severe_threshold) {
                return Err(format!("run {} severe flag disagrees with its error", r.scenario_id));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuation::BankCommand;

    fn target(delta: f64) -> ScenarioTarget {
        ScenarioTarget {
            id: 0,
            p_init: 1.0,
            p_target_delta: delta,
        }
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        let mut c = RunConfig::default();
        c.tolerance_bands = vec![1.0, 1.0];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.severe_threshold = 4.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.severe_threshold = 12.0;
        assert!(c.validate().is_ok());
        let mut c = RunConfig::default();
        c.window = WindowMode::Fixed { at: 250.0 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn uniform_window_is_keyed_by_id() {
        let mut c = RunConfig::default();
        c.window = WindowMode::Uniform { lo: 60.0, hi: 100.0, seed: 3 };
        let a = c.eval_time(5);
        assert_eq!(a, c.eval_time(5));
        assert!((60.0..=100.0).contains(&a));
        assert_ne!(a, c.eval_time(6));
    }

    #[test]
    fn null_motion_misses_by_delta() {
        let engine = Engine::default();
        let cfg = RunConfig::default();
        let cv = ControlVector::hold(engine.init_positions());
        let r = execute_one(&target(-0.25), &cv, &cfg, &engine);
        assert!((r.error_pct - 100.0 / 3.0).abs() < 1e-6, "{}", r.error_pct);
        assert!(r.band_success.iter().all(|b| !b));
        assert!(r.severe_failure);
        assert_eq!(r.family_executed, Some(ActuationFamily::SingleB2));
    }

    #[test]
    fn out_of_range_position_is_invalid() {
        let engine = Engine::default();
        let cfg = RunConfig::default();
        let mut cv = ControlVector::hold(engine.init_positions());
        cv.b1_pos = 200.0;
        let r = execute_one(&target(-0.1), &cv, &cfg, &engine);
        assert!(!r.proposal_valid);
        assert!(r.error_pct.is_infinite());
        assert_eq!(r.failure, Some(FailureKind::InvalidProposal));
        assert!(r.band_success.iter().all(|b| !b));
        assert_eq!(r.family_executed, None);
    }

    #[test]
    fn execution_is_deterministic() {
        let engine = Engine::default();
        let cfg = RunConfig::default();
        let cv = ControlVector::from_banks(
            BankCommand { pos: 180.0, time: 0.0, speed: 1.0 },
            BankCommand { pos: 80.0, time: 3.0, speed: 2.0 },
        );
        let a = execute_one(&target(-0.2), &cv, &cfg, &engine);
        let b = execute_one(&target(-0.2), &cv, &cfg, &engine);
        assert_eq!(a, b);
        assert!(a.achieved_power.unwrap() < 1.0);
    }

    #[test]
    fn zero_ramp_misses_nonzero_target() {
        let engine = Engine::default();
        let cfg = RunConfig::default();
        let s = PyrkScenario {
            id: 1,
            p_init: 1.0,
            p_target_delta: -0.2,
            vector: PyrkVector { rho_insert: 0.0, duration: 10.0 },
            seed: 0,
        };
        let r = execute_pyrk(&s, &s.vector, &cfg, &engine);
        assert!((r.error_pct - 25.0).abs() < 1e-6);
        assert!(r.band_success.iter().all(|b| !b));
    }

    #[test]
    fn infinite_sentinel_round_trips_through_json() {
        let r = RunResult::synthetic(3, -0.1, f64::INFINITY, &DEFAULT_BANDS, 10.0);
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"error_pct\":null"));
        let back: RunResult = serde_json::from_str(&text).unwrap();
        assert!(back.error_pct.is_infinite());
        assert_eq!(back.band_success, r.band_success);
    }

    #[test]
    fn report_counts_conserve_with_unclassified() {
        let engine = Engine::default();
        let cfg = RunConfig::default();
        let mut results: Vec<RunResult> = (0..10)
            .map(|i| RunResult::synthetic(i, -0.05 - 0.04 * i as f64, i as f64 * 1.5, &cfg.tolerance_bands, 10.0))
            .collect();
        results.push(RunResult::synthetic(10, -0.2, f64::INFINITY, &cfg.tolerance_bands, 10.0));
        let rep = ValidationReport::build("test", "synthetic", &engine, &cfg, results).unwrap();
        rep.check_invariants().unwrap();
        assert_eq!(rep.unclassified.attempts, 1);
        assert_eq!(rep.errors.excluded, 1);
        assert_eq!(rep.severe_failures, 4);
        let text = rep.to_json().unwrap();
        assert_eq!(ValidationReport::from_json(&text).unwrap(), rep);
    }
}
