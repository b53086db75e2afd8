use std::collections::BTreeMap;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rodharness::execution::{execute_one, ScenarioTarget};
use rodharness::policy::{calibrate_proportional, serve_stream, FaultPlan, LoopbackServer, ProportionalConfig, Responder};
use rodharness::scenario::{build_corpus, read_corpus_checked, write_corpus};
use rodharness::{ActuationFamily, ControlVector, Corpus, Engine, Regime, RunConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::HarnessConfig;
use crate::{CalibrateArgs, CliError, ErrorKind, GenCorpusArgs, ServeArgs};

mod report;
mod validate;

pub use report::report;
pub use validate::validate;

/// Smallest corpus the generator accepts.
pub const MIN_CORPUS_SIZE: usize = 10;
/// Replay error above which a labeled vector is unsound.
const ORACLE_HARD_LIMIT_PCT: f64 = 0.5;

pub struct Context {
    pub cfg: HarnessConfig,
    /// Raw config file text, when one was given.
    pub text: Option<String>,
}

impl Context {
    fn config_inputs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        if let Some(t) = &self.text {
            m.insert("config_file".into(), sha256_hex(t.as_bytes()));
        }
        // Thread count does not change results, so it stays out of the digest.
        let mut cfg = self.cfg.clone();
        cfg.parallel = HarnessConfig::default().parallel;
        m.insert("effective_config".into(), sha256_hex(cfg.to_toml().as_bytes()));
        m
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::internal(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
}

pub fn load_corpus(path: &Path, engine: &Engine) -> Result<Corpus, CliError> {
    let (corpus, warning) = read_corpus_checked(path, engine).map_err(|e| match e {
        rodharness::Error::Io(io) => CliError::config(format!("cannot read corpus {}: {io}", path.display())),
        e => CliError::from_core(e, ErrorKind::Config),
    })?;
    if let Some(w) = warning {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(corpus)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    let mut out = io::stdout().lock();
    writeln!(out, "{text}")?;
    Ok(())
}

#[derive(Serialize)]
struct SpotCheck {
    checked: usize,
    max_error_pct: f64,
    failures: usize,
}

#[derive(Serialize)]
struct CorpusSummary {
    path: PathBuf,
    sha256: String,
    size: usize,
    seed: u64,
    engine_fingerprint: String,
    families: BTreeMap<&'static str, usize>,
    regimes: BTreeMap<&'static str, usize>,
    resamples: usize,
    increases: usize,
    decreases: usize,
    spot_check: SpotCheck,
    config: HarnessConfig,
}

/// Replays every hundredth scenario (at least one) with its own vector.
fn spot_check(corpus: &Corpus, engine: &Engine, run: &RunConfig) -> SpotCheck {
    let picked: Vec<_> = corpus.scenarios.iter().step_by(100).collect();
    let errors: Vec<f64> = picked
        .iter()
        .map(|s| execute_one(&ScenarioTarget::from(*s), &s.control, run, engine).error_pct)
        .collect();
    SpotCheck {
        checked: errors.len(),
        max_error_pct: errors.iter().copied().fold(0.0, f64::max),
        failures: errors.iter().filter(|&&e| !e.is_finite() || e > ORACLE_HARD_LIMIT_PCT).count(),
    }
}

pub fn gen_corpus(ctx: Context, args: GenCorpusArgs) -> Result<(), CliError> {
    let mut cfg = ctx.cfg.clone();
    if let Some(p) = args.parallel {
        cfg.parallel = p;
    }
    let size = match args.size {
        Some(n) => n,
        None => *cfg
            .corpus
            .sizes
            .first()
            .ok_or_else(|| CliError::config("no --size given and [corpus] sizes is empty"))?,
    };
    if size < MIN_CORPUS_SIZE {
        return Err(CliError::config(format!(
            "corpus size {size} is below the minimum of {MIN_CORPUS_SIZE}"
        )));
    }
    cfg.corpus.seed = args.seed.unwrap_or(cfg.corpus.seed);
    cfg.validate()?;
    let engine = cfg.engine()?;
    let run = cfg.run_config();
    let seed = cfg.corpus.seed;
    let out = args
        .out
        .unwrap_or_else(|| cfg.out_dir.join(format!("corpus-{size}-{seed}.jsonl")));

    let corpus = in_pool(cfg.parallel, || {
        build_corpus(size, cfg.corpus.mixture, seed, &engine, &run, &cfg.corpus.oracle)
    })?
    .map_err(|e| CliError::from_core(e, ErrorKind::Generation))?;
    let check = in_pool(cfg.parallel, || spot_check(&corpus, &engine, &run))?;
    if check.failures > 0 {
        return Err(CliError::new(
            ErrorKind::Generation,
            format!(
                "oracle spot-check failed: {} of {} replays beyond {ORACLE_HARD_LIMIT_PCT}% (max {}%)",
                check.failures, check.checked, check.max_error_pct
            ),
        ));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_corpus(&corpus, &out).map_err(|e| CliError::from_core(e, ErrorKind::Internal))?;

    let h = &corpus.header;
    let counts = corpus.regime_counts();
    let summary = CorpusSummary {
        sha256: file_digest(&out)?,
        path: out,
        size: h.size,
        seed,
        engine_fingerprint: h.engine_fingerprint.clone(),
        families: ActuationFamily::ALL.iter().map(|f| (f.as_str(), h.counts[f.index()])).collect(),
        regimes: Regime::ALL.iter().map(|r| (r.as_str(), counts[r.index()])).collect(),
        resamples: h.resamples,
        increases: h.increases,
        decreases: h.decreases,
        spot_check: check,
        config: cfg,
    };
    print_json(&summary)
}

/// Calibration output: the fitted controller plus what it was fitted under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub engine_fingerprint: String,
    pub run: RunConfig,
    pub proportional: ProportionalConfig,
}

pub fn calibrate(ctx: Context, args: CalibrateArgs) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    cfg.validate()?;
    let engine = cfg.engine()?;
    let run = cfg.run_config();
    let proportional =
        calibrate_proportional(&engine, &run).map_err(|e| CliError::from_core(e, ErrorKind::Generation))?;
    let file = CalibrationFile {
        engine_fingerprint: engine.fingerprint(),
        run,
        proportional,
    };
    let out = args.out.unwrap_or_else(|| cfg.out_dir.join("calibration.json"));
    let text = serde_json::to_string_pretty(&file).map_err(|e| CliError::internal(e.to_string()))?;
    write_output(&out, format!("{text}\n").as_bytes())?;
    let cal = file.proportional.calibration.as_ref();
    println!(
        "gain {} steps per unit delta over {} points (residual rms {}) -> {}",
        file.proportional.gain,
        cal.map_or(0, |c| c.points.len()),
        cal.map_or(0.0, |c| c.residual_rms),
        out.display()
    );
    Ok(())
}

/// Answers each request with the corpus vector for its id.
pub fn oracle_responder(corpus: &Corpus) -> Responder {
    let table: BTreeMap<u64, ControlVector> = corpus.scenarios.iter().map(|s| (s.id, s.control)).collect();
    Arc::new(move |req| {
        table
            .get(&req.id)
            .copied()
            .ok_or_else(|| format!("unknown scenario id {}", req.id))
    })
}

pub fn serve(ctx: Context, args: ServeArgs) -> Result<(), CliError> {
    ctx.cfg.validate()?;
    let engine = ctx.cfg.engine()?;
    let corpus = load_corpus(&args.corpus, &engine)?;
    let responder = oracle_responder(&corpus);
    match (&args.listen, args.stdio) {
        (Some(addr), _) => {
            let server = LoopbackServer::bind(addr, responder, FaultPlan::none())
                .map_err(|e| CliError::new(ErrorKind::Transport, format!("cannot listen on {addr}: {e}")))?;
            println!("listening on {}", server.addr());
            io::stdout().flush()?;
            server.join();
            Ok(())
        }
        (None, true) => serve_stream(BufReader::new(io::stdin()), io::stdout(), responder, &FaultPlan::none())
            .map_err(|e| CliError::new(ErrorKind::Transport, e.to_string())),
        (None, false) => Err(CliError::config("serve needs --stdio or --listen ADDR")),
    }
}
