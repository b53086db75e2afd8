use std::path::PathBuf;
use std::time::Duration;

use rodharness::execution::{batch_validate, ScenarioTarget};
use rodharness::policy::{
    calibrate_proportional, ExternalPolicy, FaultPlan, KnnPolicy, LoopbackServer, OraclePolicy, Policy,
    ProportionalPolicy, SessionConfig, Transport,
};
use rodharness::ValidationReport;

use super::{file_digest, load_corpus, oracle_responder, write_output, CalibrationFile, Context};
use crate::{CliError, ErrorKind, ValidateArgs};

const LOOPBACK: &str = "conformance-loopback";

fn transport_for(command: &[String]) -> Transport {
    match command {
        [one] if one.starts_with("tcp://") => Transport::Tcp {
            addr: one.trim_start_matches("tcp://").to_string(),
        },
        [program, args @ ..] => Transport::Command {
            program: program.clone(),
            args: args.to_vec(),
        },
        [] => unreachable!("checked by caller"),
    }
}

pub fn validate(ctx: Context, args: ValidateArgs) -> Result<(), CliError> {
    let mut cfg = ctx.cfg.clone();
    if let Some(p) = args.policy {
        cfg.policy.kind = p;
    }
    if let Some(p) = args.parallel {
        cfg.parallel = p;
    }
    if args.calibration.is_some() {
        cfg.policy.calibration = args.calibration;
    }
    if args.train_corpus.is_some() {
        cfg.policy.train_corpus = args.train_corpus;
    }
    if !args.command.is_empty() {
        cfg.policy.command = args.command;
    }
    if let Some(t) = args.timeout_ms {
        cfg.policy.timeout_ms = t;
    }
    if let Some(s) = args.sessions {
        cfg.policy.sessions = s;
    }
    let ctx = Context { cfg, text: ctx.text };
    let cfg = &ctx.cfg;
    cfg.validate()?;
    let engine = cfg.engine()?;
    let run = cfg.run_config();

    let corpus = load_corpus(&args.corpus, &engine)?;
    let n = args.runs.unwrap_or(corpus.scenarios.len());
    if n == 0 || n > corpus.scenarios.len() {
        return Err(CliError::config(format!(
            "--runs {n} must be between 1 and the corpus size {}",
            corpus.scenarios.len()
        )));
    }
    let targets: Vec<ScenarioTarget> = corpus.scenarios[..n].iter().map(ScenarioTarget::from).collect();

    let mut inputs = ctx.config_inputs();
    inputs.insert("corpus".into(), file_digest(&args.corpus)?);
    inputs.insert("policy.kind".into(), cfg.policy.kind.clone());

    let mut _server = None;
    let mut external = None;
    let policy: Box<dyn Policy> = match cfg.policy.kind.as_str() {
        "oracle" => Box::new(OraclePolicy::new(&corpus.scenarios)),
        "proportional" => {
            let config = match &cfg.policy.calibration {
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    let file: CalibrationFile = serde_json::from_str(&text)
                        .map_err(|e| CliError::config(format!("calibration {}: {e}", path.display())))?;
                    if file.engine_fingerprint != engine.fingerprint() {
                        eprintln!(
                            "warning: calibration {} was fitted under engine {}, current engine is {}",
                            path.display(),
                            file.engine_fingerprint,
                            engine.fingerprint()
                        );
                    }
                    inputs.insert("calibration".into(), file_digest(path)?);
                    file.proportional
                }
                None => calibrate_proportional(&engine, &run)
                    .map_err(|e| CliError::from_core(e, ErrorKind::Generation))?,
            };
            inputs.insert("policy.gain".into(), config.gain.to_string());
            inputs.insert("policy.rod_speed".into(), config.rod_speed.to_string());
            Box::new(ProportionalPolicy::new(config, &engine))
        }
        "knn" => {
            let path: PathBuf = cfg
                .policy
                .train_corpus
                .clone()
                .ok_or_else(|| CliError::config("knn policy needs --train-corpus"))?;
            let train = load_corpus(&path, &engine)?;
            inputs.insert("train_corpus".into(), file_digest(&path)?);
            inputs.insert("train_corpus.size".into(), train.scenarios.len().to_string());
            Box::new(KnnPolicy::new(&train.scenarios).map_err(|e| CliError::from_core(e, ErrorKind::Config))?)
        }
        "external" => {
            let command = &cfg.policy.command;
            if command.is_empty() {
                return Err(CliError::config("external policy needs a command"));
            }
            let transport = if command.len() == 1 && command[0] == LOOPBACK {
                let server = LoopbackServer::spawn(oracle_responder(&corpus), FaultPlan::none())
                    .map_err(|e| CliError::new(ErrorKind::Transport, format!("loopback server: {e}")))?;
                let addr = server.addr().to_string();
                _server = Some(server);
                Transport::Tcp { addr }
            } else {
                transport_for(command)
            };
            inputs.insert("policy.command".into(), command.join(" "));
            let session = SessionConfig {
                transport,
                timeout: Duration::from_millis(cfg.policy.timeout_ms),
                sessions: cfg.policy.sessions,
            };
            let p = ExternalPolicy::connect(&session).map_err(|e| CliError::from_core(e, ErrorKind::Transport))?;
            let p = std::sync::Arc::new(p);
            external = Some(std::sync::Arc::clone(&p));
            Box::new(SharedExternal(p))
        }
        other => {
            return Err(CliError::config(format!(
                "unknown policy '{other}' (expected proportional, knn, oracle or external)"
            )))
        }
    };

    let source = args
        .corpus
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut report = batch_validate(policy.as_ref(), &targets, &run, &engine, cfg.parallel, &source)
        .map_err(|e| CliError::from_core(e, ErrorKind::Internal))?;
    report.inputs = inputs;
    if let Some(p) = &external {
        let s = p.stats();
        eprintln!(
            "frames: {} requests, {} responses, {} malformed, {} timeouts, {} transport errors, {} stale",
            s.requests, s.responses, s.malformed, s.timeouts, s.transport_errors, s.stale_discarded
        );
    }
    report
        .check_invariants()
        .map_err(|e| CliError::internal(format!("report invariant violated: {e}")))?;

    let out = args
        .out
        .unwrap_or_else(|| cfg.out_dir.join(format!("report-{}.json", report.policy)));
    let text = report.to_json().map_err(|e| CliError::from_core(e, ErrorKind::Internal))?;
    write_output(&out, format!("{text}\n").as_bytes())?;
    print_summary(&report, &out);
    Ok(())
}

/// Keeps the session handle reachable for frame statistics after the batch.
struct SharedExternal(std::sync::Arc<ExternalPolicy>);

impl Policy for SharedExternal {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn propose(
        &self,
        req: &rodharness::policy::ProposalRequest,
    ) -> Result<rodharness::ControlVector, rodharness::policy::ProposalFailure> {
        self.0.propose(req)
    }
}

fn print_summary(report: &ValidationReport, out: &std::path::Path) {
    let bands: Vec<String> = report
        .bands
        .iter()
        .map(|b| format!("±{}% {:.4}", b.band_pct, b.rate))
        .collect();
    println!(
        "{} runs, policy {}, parse rate {:.4}: {} -> {}",
        report.runs,
        report.policy,
        report.proposals.parse_rate,
        bands.join(", "),
        out.display()
    );
}
