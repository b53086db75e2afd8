//! Synthetic scenario corpora.
//!
//! Every scenario starts at nominal power with banks at their initial
//! positions and asks for a fractional power change. Labels come from a
//! forward-simulation oracle: free parameters (start times, speeds, the
//! two-bank worth split) are sampled, then the total reactivity demand is
//! searched until the executed command lands on target.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuation::{
    classify, parse_schema, round_sig6, serialize_schema, validate, ActuationFamily, BankCommand,
    ControlVector, PyrkVector, MOVE_THRESHOLD,
};
use crate::error::{domain, Error, Result};
use crate::execution::{simulate_pyrk_power, simulate_terminal_power, RunConfig};
use crate::kinetics::Engine;
use crate::seed::{child_seed, rng_for};

pub const SMALL_MAX: f64 = 0.10;
pub const MEDIUM_MAX: f64 = 0.30;
pub const LARGE_MAX: f64 = 0.50;
pub const MIN_ABS_DELTA: f64 = 0.01;

/// Maximum target draws per scenario before generation gives up.
pub const ATTEMPTS_PER_SCENARIO: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Small,
    Medium,
    Large,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Small, Regime::Medium, Regime::Large];

    /// Bin by `|delta|`: `(0, 0.10)`, `[0.10, 0.30)`, `[0.30, 0.50]`.
    pub fn of(delta: f64) -> Result<Regime> {
        let a = delta.abs();
        if !(a > 0.0 && a <= LARGE_MAX) {
            return Err(domain(format!(
                "power change {delta} outside the regime bins (0, {LARGE_MAX}]"
            )));
        }
        Ok(if a < SMALL_MAX {
            Regime::Small
        } else if a < MEDIUM_MAX {
            Regime::Medium
        } else {
            Regime::Large
        })
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Small => "small",
            Regime::Medium => "medium",
            Regime::Large => "large",
        }
    }

    fn bounds(self) -> (f64, f64) {
        match self {
            Regime::Small => (MIN_ABS_DELTA, SMALL_MAX),
            Regime::Medium => (SMALL_MAX, MEDIUM_MAX),
            Regime::Large => (MEDIUM_MAX, LARGE_MAX),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u64,
    pub p_init: f64,
    pub p_target_delta: f64,
    pub family: ActuationFamily,
    pub control: ControlVector,
    pub regime: Regime,
    pub seed: u64,
}

impl Scenario {
    pub fn target_power(&self) -> f64 {
        self.p_init * (1.0 + self.p_target_delta)
    }
}

/// Draws a signed fractional power change: a regime by weight, then a
/// magnitude uniform within the bin, then a uniform sign. The result is
/// rounded to the schema's six significant digits.
pub fn sample_target<R: Rng + ?Sized>(rng: &mut R, regime_weights: [f64; 3]) -> Result<f64> {
    if regime_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(domain("regime weights must be finite and nonnegative"));
    }
    let total: f64 = regime_weights.iter().sum();
    if !(total > 0.0) {
        return Err(domain("regime weights sum to zero"));
    }
    let mut pick = rng.gen::<f64>() * total;
    let mut regime = Regime::Large;
    for (r, &w) in Regime::ALL.iter().zip(&regime_weights) {
        if w > 0.0 && pick < w {
            regime = *r;
            break;
        }
        pick -= w;
    }
    let (lo, hi) = regime.bounds();
    let mag = match regime {
        Regime::Large => rng.gen_range(lo..=hi),
        _ => rng.gen_range(lo..hi),
    };
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let delta = round_sig6(sign * mag);
    // Rounding may not push a value across a bin edge.
    Ok(if Regime::of(delta)? == regime {
        delta
    } else {
        sign * mag
    })
}

/// Free-parameter ranges and search limits for the labeling oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    /// Relative error (percent) at which a candidate is accepted.
    pub accept_pct: f64,
    pub max_evaluations: usize,
    pub start_time: (f64, f64),
    pub speed: (f64, f64),
    pub split: (f64, f64),
    pub sequential_gap: (f64, f64),
    /// Speeds are raised as needed so every bank is at rest by this time (s).
    pub arrival_limit: f64,
    /// Fraction of a bank's reach the seed demand may use.
    pub reach_margin: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            accept_pct: 0.2,
            max_evaluations: 40,
            start_time: (0.0, 10.0),
            speed: (1.0, 4.0),
            split: (0.3, 0.7),
            sequential_gap: (2.0, 10.0),
            arrival_limit: 60.0,
            reach_margin: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub control: ControlVector,
    pub achieved_power: f64,
    pub error_pct: f64,
    pub evaluations: usize,
}

/// Sampled timing and split for one family.
#[derive(Debug, Clone, Copy)]
struct Layout {
    shares: [f64; 2],
    times: [f64; 2],
    speeds: [f64; 2],
}

fn sample_layout<R: Rng + ?Sized>(family: ActuationFamily, s: &OracleSettings, rng: &mut R) -> Layout {
    let mut uni = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let t = uni(s.start_time);
    let speeds = [uni(s.speed), uni(s.speed)];
    match family {
        ActuationFamily::SingleB1 => Layout {
            shares: [1.0, 0.0],
            times: [t, 0.0],
            speeds,
        },
        ActuationFamily::SingleB2 => Layout {
            shares: [0.0, 1.0],
            times: [0.0, t],
            speeds,
        },
        ActuationFamily::Simultaneous => {
            let f = uni(s.split);
            Layout {
                shares: [f, 1.0 - f],
                times: [t, t],
                speeds,
            }
        }
        ActuationFamily::Sequential => {
            let f = uni(s.split);
            let gap = uni(s.sequential_gap);
            let bank_one_first = rng.gen_bool(0.5);
            let times = if bank_one_first { [t, t + gap] } else { [t + gap, t] };
            Layout {
                shares: [f, 1.0 - f],
                times,
                speeds,
            }
        }
    }
}

struct Search<'a> {
    engine: &'a Engine,
    cfg: &'a RunConfig,
    layout: Layout,
    target: f64,
    evaluations: usize,
}

impl Search<'_> {
    /// Bank positions realizing a total demand of `demand` pcm.
    fn positions(&self, demand: f64, margin: f64) -> Result<[f64; 2]> {
        let mut pos = [0.0; 2];
        for i in 0..2 {
            let bank = &self.engine.banks[i];
            let share = self.layout.shares[i];
            if share == 0.0 {
                pos[i] = bank.init_position;
                continue;
            }
            let want = share * demand;
            let (lo, hi) = bank.reach();
            if want < lo * margin || want > hi * margin {
                let side = if want < 0.0 { "insertion" } else { "withdrawal" };
                let avail = if want < 0.0 { lo } else { hi };
                return Err(Error::Infeasible(format!(
                    "bank {} {side} reach exceeded: needs {want:.1} pcm, has {avail:.1} pcm",
                    i + 1
                )));
            }
            let p = bank.position_for_relative(want)?;
            if (p - bank.init_position).abs() < MOVE_THRESHOLD {
                return Err(Error::Infeasible(format!(
                    "bank {} displacement {:.3} steps is below one step",
                    i + 1,
                    p - bank.init_position
                )));
            }
            pos[i] = p;
        }
        Ok(pos)
    }

    fn control(&self, pos: [f64; 2]) -> ControlVector {
        let init = self.engine.init_positions();
        let cmd = |i: usize, init: f64| {
            if self.layout.shares[i] == 0.0 {
                BankCommand {
                    pos: init,
                    time: 0.0,
                    speed: 1.0,
                }
            } else {
                BankCommand {
                    pos: pos[i],
                    time: self.layout.times[i],
                    speed: self.layout.speeds[i],
                }
            }
        };
        ControlVector::from_banks(cmd(0, init.0), cmd(1, init.1)).quantized()
    }

    fn evaluate(&mut self, demand: f64) -> Result<(ControlVector, f64)> {
        let pos = self.positions(demand, 1.0)?;
        let cv = self.control(pos);
        self.evaluations += 1;
        let power = simulate_terminal_power(self.engine, &cv, self.cfg, self.cfg.horizon)
            .map_err(|e| Error::Infeasible(format!("forward simulation failed: {e}")))?;
        Ok((cv, power - self.target))
    }
}

/// Constructs a command of the given family that drives power from nominal
/// to `1 + delta` at the evaluation horizon of `cfg`.
pub fn inverse_solve<R: Rng + ?Sized>(
    delta: f64,
    family: ActuationFamily,
    engine: &Engine,
    cfg: &RunConfig,
    settings: &OracleSettings,
    rng: &mut R,
) -> Result<OracleSolution> {
    if !(delta.is_finite() && delta > -1.0 && delta != 0.0) {
        return Err(domain(format!("power change {delta} is not a valid target")));
    }
    let mut layout = sample_layout(family, settings, rng);
    let target = 1.0 + delta;
    let seed_demand = engine.params.alpha_p * delta;

    let mut search = Search {
        engine,
        cfg,
        layout,
        target,
        evaluations: 0,
    };
    let seed_pos = search.positions(seed_demand, settings.reach_margin)?;
    for i in 0..2 {
        if layout.shares[i] == 0.0 {
            continue;
        }
        let distance = (seed_pos[i] - engine.banks[i].init_position).abs() * 1.05;
        let window = settings.arrival_limit - layout.times[i];
        if window <= 0.0 {
            return Err(Error::Infeasible(format!(
                "bank {} starts after the arrival limit",
                i + 1
            )));
        }
        layout.speeds[i] = layout.speeds[i].max(distance / window);
    }
    search.layout = layout;

    let tolerance = settings.accept_pct / 100.0 * target;
    let accept = |cv: ControlVector, g: f64, evals: usize| OracleSolution {
        control: cv,
        achieved_power: g + target,
        error_pct: (g / target).abs() * 100.0,
        evaluations: evals,
    };

    // g(demand) = P(horizon) - target rises with demand; g(0) = -delta.
    let (mut x, mut gx) = (0.0, -delta);
    let mut bracket: Option<((f64, f64), (f64, f64))> = None;
    let mut next = seed_demand;
    let mut stale_side = 0i8;
    while search.evaluations < settings.max_evaluations {
        let (cv, g) = search.evaluate(next)?;
        if g.abs() <= tolerance {
            return Ok(accept(cv, g, search.evaluations));
        }
        bracket = match bracket {
            None if (g < 0.0) != (gx < 0.0) => {
                if g < 0.0 {
                    Some(((next, g), (x, gx)))
                } else {
                    Some(((x, gx), (next, g)))
                }
            }
            None => None,
            Some((lo, hi)) => {
                // Illinois variant of false position.
                if g < 0.0 {
                    let hi = if stale_side == -1 { (hi.0, hi.1 * 0.5) } else { hi };
                    stale_side = -1;
                    Some(((next, g), hi))
                } else {
                    let lo = if stale_side == 1 { (lo.0, lo.1 * 0.5) } else { lo };
                    stale_side = 1;
                    Some((lo, (next, g)))
                }
            }
        };
        match bracket {
            Some(((xl, gl), (xh, gh))) => {
                let mut cand = xl - gl * (xh - xl) / (gh - gl);
                if !(cand > xl.min(xh) && cand < xl.max(xh)) {
                    cand = 0.5 * (xl + xh);
                }
                next = cand;
            }
            None => {
                // Secant through the no-motion point.
                let slope = (g - gx) / (next - x);
                let step = next - g / slope;
                x = next;
                gx = g;
                if !step.is_finite() || slope <= 0.0 {
                    return Err(Error::Infeasible("oracle search lost monotonicity".into()));
                }
                next = step;
            }
        }
    }
    Err(Error::Infeasible(format!(
        "oracle search did not reach {:.3}% within {} evaluations",
        settings.accept_pct, settings.max_evaluations
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub size: usize,
    pub master_seed: u64,
    pub mixture: [f64; 4],
    pub counts: [usize; 4],
    pub engine_fingerprint: String,
    pub horizon: f64,
    pub dt: f64,
    pub resamples: usize,
    pub increases: usize,
    pub decreases: usize,
}

pub const CORPUS_FORMAT: &str = "rodharness-corpus/1";
pub const PYRK_FORMAT: &str = "rodharness-pyrk/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub scenarios: Vec<Scenario>,
}

impl Corpus {
    /// First `n` scenarios, with header counts recomputed.
    pub fn prefix(&self, n: usize) -> Corpus {
        let scenarios: Vec<Scenario> = self.scenarios.iter().take(n).cloned().collect();
        let mut header = self.header.clone();
        header.size = scenarios.len();
        header.counts = family_counts(&scenarios);
        header.increases = scenarios.iter().filter(|s| s.p_target_delta > 0.0).count();
        header.decreases = scenarios.len() - header.increases;
        Corpus { header, scenarios }
    }

    pub fn get(&self, id: u64) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    /// Warning text when the corpus was generated under another engine.
    pub fn engine_mismatch(&self, engine: &Engine) -> Option<String> {
        let fp = engine.fingerprint();
        (fp != self.header.engine_fingerprint).then(|| {
            format!(
                "corpus engine fingerprint {} differs from current engine {fp}",
                self.header.engine_fingerprint
            )
        })
    }

    pub fn regime_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.scenarios {
            c[s.regime.index()] += 1;
        }
        c
    }
}

pub fn family_counts(scenarios: &[Scenario]) -> [usize; 4] {
    let mut c = [0; 4];
    for s in scenarios {
        c[s.family.index()] += 1;
    }
    c
}

/// Largest-remainder apportionment of `n` items by `mixture`.
pub fn apportion(n: usize, mixture: [f64; 4]) -> Result<[usize; 4]> {
    if mixture.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(domain("mixture weights must be finite and nonnegative"));
    }
    let total: f64 = mixture.iter().sum();
    if !(total > 0.0) {
        return Err(domain("mixture weights sum to zero"));
    }
    let exact = mixture.map(|w| w / total * n as f64);
    let mut counts = exact.map(|x| x.round() as usize);
    let mut assigned: usize = counts.iter().sum();
    while assigned != n {
        // Adjust the entry whose rounding error is largest in the needed direction.
        let over = assigned > n;
        let i = (0..4)
            .filter(|&i| !over || counts[i] > 0)
            .max_by(|&a, &b| {
                let ea = if over { counts[a] as f64 - exact[a] } else { exact[a] - counts[a] as f64 };
                let eb = if over { counts[b] as f64 - exact[b] } else { exact[b] - counts[b] as f64 };
                ea.total_cmp(&eb).then(b.cmp(&a))
            })
            .expect("some entry adjustable");
        if over {
            counts[i] -= 1;
            assigned -= 1;
        } else {
            counts[i] += 1;
            assigned += 1;
        }
    }
    Ok(counts)
}

fn generate_one(
    id: u64,
    family: ActuationFamily,
    master_seed: u64,
    engine: &Engine,
    cfg: &RunConfig,
    settings: &OracleSettings,
) -> Result<(Scenario, usize)> {
    let seed = child_seed(master_seed, id);
    let mut rng = rng_for(seed);
    let mut last = None;
    for attempt in 1..=ATTEMPTS_PER_SCENARIO {
        let delta = sample_target(&mut rng, [1.0, 1.0, 1.0])?;
        match inverse_solve(delta, family, engine, cfg, settings, &mut rng) {
            Ok(sol) => {
                let scenario = Scenario {
                    id,
                    p_init: 1.0,
                    p_target_delta: delta,
                    family,
                    control: sol.control,
                    regime: Regime::of(delta)?,
                    seed,
                };
                return Ok((scenario, attempt));
            }
            Err(Error::Infeasible(why)) => last = Some(why),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Generation(format!(
        "scenario {id} ({family}) exhausted {ATTEMPTS_PER_SCENARIO} target draws; last rejection: {}",
        last.unwrap_or_default()
    )))
}

/// Builds a corpus of `n` labeled scenarios with exact family counts.
/// Each scenario depends only on `(seed, id)`, so the output does not vary
/// with thread scheduling.
pub fn build_corpus(
    n: usize,
    mixture: [f64; 4],
    seed: u64,
    engine: &Engine,
    cfg: &RunConfig,
    settings: &OracleSettings,
) -> Result<Corpus> {
    if n < 10 {
        return Err(domain(format!("corpus size must be at least 10, got {n}")));
    }
    let counts = apportion(n, mixture)?;
    let mut families: Vec<ActuationFamily> = ActuationFamily::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&f, c)| std::iter::repeat_n(f, c))
        .collect();
    let mut rng: ChaCha8Rng = rng_for(seed);
    families.shuffle(&mut rng);

    let generated: Vec<Result<(Scenario, usize)>> = families
        .par_iter()
        .enumerate()
        .map(|(i, &f)| generate_one(i as u64, f, seed, engine, cfg, settings))
        .collect();
    let mut scenarios = Vec::with_capacity(n);
    let mut resamples = 0;
    for g in generated {
        let (s, attempts) = g?;
        resamples += attempts - 1;
        scenarios.push(s);
    }
    let increases = scenarios.iter().filter(|s| s.p_target_delta > 0.0).count();
    Ok(Corpus {
        header: CorpusHeader {
            format: CORPUS_FORMAT.into(),
            size: n,
            master_seed: seed,
            mixture,
            counts,
            engine_fingerprint: engine.fingerprint(),
            horizon: cfg.horizon,
            dt: cfg.dt,
            resamples,
            increases,
            decreases: n - increases,
        },
        scenarios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScenarioRecord {
    id: u64,
    p_init: f64,
    p_target_delta: f64,
    family: ActuationFamily,
    schema: String,
    regime: Regime,
    seed: u64,
}

impl From<&Scenario> for ScenarioRecord {
    fn from(s: &Scenario) -> Self {
        Self {
            id: s.id,
            p_init: s.p_init,
            p_target_delta: s.p_target_delta,
            family: s.family,
            schema: serialize_schema(s.p_init, s.p_target_delta, &s.control),
            regime: s.regime,
            seed: s.seed,
        }
    }
}

impl ScenarioRecord {
    fn into_scenario(self, init: (f64, f64)) -> std::result::Result<Scenario, String> {
        let rec = parse_schema(&self.schema).map_err(|e| e.to_string())?;
        if rec.p_init != self.p_init || rec.p_target != self.p_target_delta {
            return Err("schema powers disagree with record fields".into());
        }
        if Regime::of(self.p_target_delta).map_err(|e| e.to_string())? != self.regime {
            return Err(format!("regime {} does not match delta", self.regime.as_str()));
        }
        validate(&rec.control, init).map_err(|v| format!("{} actuator violations", v.len()))?;
        if classify(&rec.control, init) != self.family {
            return Err(format!("control does not classify as {}", self.family));
        }
        Ok(Scenario {
            id: self.id,
            p_init: self.p_init,
            p_target_delta: self.p_target_delta,
            family: self.family,
            control: rec.control,
            regime: self.regime,
            seed: self.seed,
        })
    }
}

/// Serializes the corpus: a header line, then one JSON record per scenario.
pub fn write_corpus_to<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    serde_json::to_writer(&mut out, &corpus.header)?;
    out.write_all(b"\n")?;
    for s in &corpus.scenarios {
        serde_json::to_writer(&mut out, &ScenarioRecord::from(s))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_corpus_to(corpus, BufWriter::new(File::create(path)?))
}

pub fn read_corpus_from<R: BufRead>(input: R) -> Result<Corpus> {
    let mut lines = input.lines();
    let first = lines.next().ok_or(Error::Load {
        line: 1,
        reason: "empty corpus file".into(),
    })??;
    let header: CorpusHeader = serde_json::from_str(&first).map_err(|e| Error::Load {
        line: 1,
        reason: format!("bad header: {e}"),
    })?;
    if header.format != CORPUS_FORMAT {
        return Err(Error::Load {
            line: 1,
            reason: format!("unsupported format '{}'", header.format),
        });
    }
    // Initial bank positions are fixed for every scenario in this schema.
    let init = Engine::default().init_positions();
    let mut scenarios = Vec::with_capacity(header.size);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        let rec: ScenarioRecord = serde_json::from_str(&line).map_err(|e| Error::Load {
            line: lineno,
            reason: e.to_string(),
        })?;
        let s = rec
            .into_scenario(init)
            .map_err(|reason| Error::Load { line: lineno, reason })?;
        scenarios.push(s);
    }
    if scenarios.len() != header.size {
        return Err(Error::Load {
            line: scenarios.len() + 2,
            reason: format!("header declares {} scenarios, found {}", header.size, scenarios.len()),
        });
    }
    Ok(Corpus { header, scenarios })
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    read_corpus_from(BufReader::new(File::open(path)?))
}

/// Loads a corpus and reports a warning when its engine fingerprint does
/// not match `engine`.
pub fn read_corpus_checked(path: &Path, engine: &Engine) -> Result<(Corpus, Option<String>)> {
    let corpus = read_corpus(path)?;
    let warning = corpus.engine_mismatch(engine);
    if let Some(w) = &warning {
        log::warn!("{}: {w}", path.display());
    }
    Ok((corpus, warning))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyrkScenario {
    pub id: u64,
    pub p_init: f64,
    pub p_target_delta: f64,
    pub vector: PyrkVector,
    pub seed: u64,
}

pub const PYRK_RHO_RANGE: (f64, f64) = (-2000.0, -10.0);
pub const PYRK_DURATION_RANGE: (f64, f64) = (3.0, 40.0);

/// Forward-generated ramp scenarios: the vector is sampled and the target
/// is whatever its execution produces.
pub fn build_pyrk_corpus(n: usize, seed: u64, engine: &Engine, cfg: &RunConfig) -> Result<Vec<PyrkScenario>> {
    if n == 0 {
        return Err(domain("ramp corpus size must be at least 1"));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|id| {
            let s = child_seed(seed, id);
            let mut rng = rng_for(s);
            let vector = PyrkVector {
                rho_insert: round_sig6(rng.gen_range(PYRK_RHO_RANGE.0..=PYRK_RHO_RANGE.1)),
                duration: round_sig6(rng.gen_range(PYRK_DURATION_RANGE.0..=PYRK_DURATION_RANGE.1)),
            };
            let power = simulate_pyrk_power(engine, &vector, cfg, cfg.horizon)?;
            Ok(PyrkScenario {
                id,
                p_init: 1.0,
                p_target_delta: round_sig6(power - 1.0),
                vector,
                seed: s,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::execution::simulate_terminal_power;

    #[test]
    fn regime_bins() {
        assert_eq!(Regime::of(-0.05).unwrap(), Regime::Small);
        assert_eq!(Regime::of(0.10).unwrap(), Regime::Medium);
        assert_eq!(Regime::of(-0.30).unwrap(), Regime::Large);
        assert_eq!(Regime::of(0.5).unwrap(), Regime::Large);
        assert!(Regime::of(0.0).is_err());
        assert!(Regime::of(0.51).is_err());
    }

    #[test]
    fn sample_target_single_bins() {
        let mut rng = rng_for(1);
        for _ in 0..2000 {
            let d = sample_target(&mut rng, [1.0, 0.0, 0.0]).unwrap().abs();
            assert!((MIN_ABS_DELTA..SMALL_MAX).contains(&d), "{d}");
            let d = sample_target(&mut rng, [0.0, 0.0, 1.0]).unwrap().abs();
            assert!((MEDIUM_MAX..=LARGE_MAX).contains(&d), "{d}");
        }
        assert!(sample_target(&mut rng, [0.0; 3]).is_err());
    }

    #[test]
    fn sample_target_bin_frequencies() {
        let mut rng = rng_for(2);
        let mut counts = [0usize; 3];
        let n = 10_000;
        for _ in 0..n {
            let d = sample_target(&mut rng, [1.0, 1.0, 1.0]).unwrap();
            counts[Regime::of(d).unwrap().index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn apportion_counts() {
        assert_eq!(apportion(1000, [0.3, 0.3, 0.3, 0.1]).unwrap(), [300, 300, 300, 100]);
        assert_eq!(apportion(10, [0.3, 0.3, 0.3, 0.1]).unwrap(), [3, 3, 3, 1]);
        let c = apportion(11, [0.3, 0.3, 0.3, 0.1]).unwrap();
        assert_eq!(c.iter().sum::<usize>(), 11);
        let c = apportion(17, [1.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(c.iter().sum::<usize>(), 17);
        assert_eq!(c[3], 0);
        assert!(apportion(10, [0.0; 4]).is_err());
    }

    fn forward_error(engine: &Engine, cfg: &RunConfig, cv: &ControlVector, delta: f64) -> f64 {
        let p = simulate_terminal_power(engine, cv, cfg, cfg.horizon).unwrap();
        ((p - (1.0 + delta)) / (1.0 + delta)).abs() * 100.0
    }

    #[test]
    fn single_b2_solution_checks_forward() {
        let engine = Engine::default();
        let cfg = RunConfig::default();
        let mut rng = rng_for(3);
        let sol = inverse_solve(-0.25, ActuationFamily::SingleB2, &engine, &cfg, &OracleSettings::default(), &mut rng)
            .unwrap();
        assert_eq!(classify(&sol.control, engine.init_positions()), ActuationFamily::SingleB2);
        let worth = engine.banks[1].relative_worth(sol.control.b2_pos).unwrap();
        assert!((worth + 500.0).abs() < 15.0, "worth {worth}");
        assert!(forward_error(&engine, &cfg, &sol.control, -0.25) < 0.5);
        assert!(sol.evaluations <= 40);
    }

    #[test]
    fn single_b1_cannot_raise_power() {
        let engine = Engine::default();
        let cfg = RunConfig::default();
        let mut rng = rng_for(4);
        let err = inverse_solve(0.40, ActuationFamily::SingleB1, &engine, &cfg, &OracleSettings::default(), &mut rng)
            .unwrap_err();
        match err {
            Error::Infeasible(msg) => assert!(msg.contains("bank 1 withdrawal"), "{msg}"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn simultaneous_even_split() {
        let engine = Engine::default();
        let cfg = RunConfig::default();
        let settings = OracleSettings {
            split: (0.5, 0.5),
            ..OracleSettings::default()
        };
        let mut rng = rng_for(5);
        let sol = inverse_solve(-0.25, ActuationFamily::Simultaneous, &engine, &cfg, &settings, &mut rng).unwrap();
        let c = sol.control;
        assert_eq!(c.b1_time, c.b2_time);
        let w1 = engine.banks[0].relative_worth(c.b1_pos).unwrap();
        let w2 = engine.banks[1].relative_worth(c.b2_pos).unwrap();
        assert!((w1 + 250.0).abs() < 10.0 && (w2 + 250.0).abs() < 10.0, "{w1} {w2}");
        assert!((w1 - w2).abs() < 1e-6 * 250.0 + 0.05);
        assert!(forward_error(&engine, &cfg, &c, -0.25) < 0.5);
    }

    #[test]
    fn sequential_has_distinct_start_times() {
        let engine = Engine::default();
        let cfg = RunConfig::default();
        let mut rng = rng_for(6);
        let sol = inverse_solve(-0.4, ActuationFamily::Sequential, &engine, &cfg, &OracleSettings::default(), &mut rng)
            .unwrap();
        assert_eq!(classify(&sol.control, engine.init_positions()), ActuationFamily::Sequential);
        assert!((sol.control.b1_time - sol.control.b2_time).abs() >= 2.0);
        assert!(forward_error(&engine, &cfg, &sol.control, -0.4) < 0.5);
    }

    #[test]
    fn small_corpus_round_trip_and_determinism() {
        let engine = Engine::default();
        let cfg = RunConfig::default();
        let settings = OracleSettings::default();
        let a = build_corpus(20, [0.3, 0.3, 0.3, 0.1], 11, &engine, &cfg, &settings).unwrap();
        let b = build_corpus(20, [0.3, 0.3, 0.3, 0.1], 11, &engine, &cfg, &settings).unwrap();
        assert_eq!(family_counts(&a.scenarios), [6, 6, 6, 2]);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_corpus_to(&a, &mut ba).unwrap();
        write_corpus_to(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
        let back = read_corpus_from(ba.as_slice()).unwrap();
        assert_eq!(back, a);
        for s in &a.scenarios {
            assert_eq!(classify(&s.control, engine.init_positions()), s.family);
            assert!(forward_error(&engine, &cfg, &s.control, s.p_target_delta) < 0.5);
        }
    }

    #[test]
    fn corpus_rejects_tiny_size() {
        let engine = Engine::default();
        let err = build_corpus(5, [0.3, 0.3, 0.3, 0.1], 1, &engine, &RunConfig::default(), &OracleSettings::default());
        assert!(err.is_err());
    }

    #[test]
    fn truncated_line_reports_its_number() {
        let engine = Engine::default();
        let corpus = build_corpus(10, [0.3, 0.3, 0.3, 0.1], 2, &engine, &RunConfig::default(), &OracleSettings::default())
            .unwrap();
        let mut buf = Vec::new();
        write_corpus_to(&corpus, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.trim_end().len() - 7];
        match read_corpus_from(cut.as_bytes()).unwrap_err() {
            Error::Load { line, .. } => assert_eq!(line, 11),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn fingerprint_mismatch_warns() {
        let engine = Engine::default();
        let corpus = build_corpus(10, [0.3, 0.3, 0.3, 0.1], 2, &engine, &RunConfig::default(), &OracleSettings::default())
            .unwrap();
        assert!(corpus.engine_mismatch(&engine).is_none());
        let mut params = engine.params.clone();
        params.alpha_p = 1500.0;
        let other = Engine::new(params, engine.banks, engine.bias_mode).unwrap();
        assert!(corpus.engine_mismatch(&other).is_some());
    }

    #[test]
    fn pyrk_corpus_ranges() {
        let engine = Engine::default();
        let cfg = RunConfig::default();
        let a = build_pyrk_corpus(12, 9, &engine, &cfg).unwrap();
        assert_eq!(a, build_pyrk_corpus(12, 9, &engine, &cfg).unwrap());
        for s in &a {
            assert!((PYRK_RHO_RANGE.0..=PYRK_RHO_RANGE.1).contains(&s.vector.rho_insert));
            assert!((PYRK_DURATION_RANGE.0..=PYRK_DURATION_RANGE.1).contains(&s.vector.duration));
            assert!(s.p_target_delta < 0.0);
        }
    }
}
