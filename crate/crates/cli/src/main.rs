use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::HarnessConfig;

/// Exit statuses. Usage errors from argument parsing also exit with 2.
pub mod exit {
    pub const CONFIG: u8 = 2;
    pub const GENERATION: u8 = 3;
    pub const TRANSPORT: u8 = 4;
    pub const INTERNAL: u8 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Generation,
    Transport,
    Internal,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub msg: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, msg: impl Into<String>) -> Self {
        Self { kind, msg: msg.into() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, msg)
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Internal, msg)
    }

    /// Classifies a library error; `fallback` covers domain errors, whose
    /// meaning depends on the command.
    pub fn from_core(e: rodharness::Error, fallback: ErrorKind) -> Self {
        use rodharness::Error as E;
        let kind = match &e {
            E::Transport(_) | E::BatchAborted(_) => ErrorKind::Transport,
            E::Infeasible(_) | E::Generation(_) | E::Calibration(_) | E::Diverged { .. } => ErrorKind::Generation,
            E::Load { .. } | E::Parse(_) => ErrorKind::Config,
            E::Io(_) | E::Json(_) | E::Csv(_) => ErrorKind::Internal,
            E::Domain(_) | E::InvalidControl(_) => fallback,
        };
        Self::new(kind, e.to_string())
    }

    fn code(&self) -> u8 {
        match self.kind {
            ErrorKind::Config => exit::CONFIG,
            ErrorKind::Generation => exit::GENERATION,
            ErrorKind::Transport => exit::TRANSPORT,
            ErrorKind::Internal => exit::INTERNAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "rodharness", version, about = "Closed-loop validation harness for reactor rod-control policies")]
struct Cli {
    /// Harness configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled scenario corpus.
    GenCorpus(GenCorpusArgs),
    /// Calibrate the proportional baseline gain.
    Calibrate(CalibrateArgs),
    /// Run a policy against a corpus and write a validation report.
    Validate(ValidateArgs),
    /// Cross-scale analysis over several validation reports.
    Report(ReportArgs),
    /// Serve oracle answers over the line protocol.
    Serve(ServeArgs),
    /// Print the effective configuration.
    PrintConfig,
}

#[derive(Args)]
pub struct GenCorpusArgs {
    /// Number of scenarios (defaults to the first configured size).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub parallel: Option<usize>,
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ValidateArgs {
    /// proportional, knn, oracle or external.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Validate only the first N scenarios.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Proportional calibration file.
    #[arg(long, value_name = "PATH")]
    pub calibration: Option<PathBuf>,
    /// Corpus the nearest-neighbor policy copies from.
    #[arg(long, value_name = "PATH")]
    pub train_corpus: Option<PathBuf>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// External policy: a program and its arguments, `tcp://HOST:PORT`, or
    /// `conformance-loopback`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "CMD")]
    pub command: Vec<String>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long, value_delimiter = ',', required = true, value_name = "A,B,...")]
    pub reports: Vec<PathBuf>,
    /// Corpus scale behind each report, strictly increasing.
    #[arg(long, value_delimiter = ',', required = true)]
    pub scales: Vec<u64>,
    /// Output directory for the analysis and CSV files.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    #[arg(long, conflicts_with = "listen")]
    pub stdio: bool,
    /// Listen on a TCP address such as 127.0.0.1:7070.
    #[arg(long, value_name = "ADDR")]
    pub listen: Option<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (cfg, text) = HarnessConfig::load(cli.config.as_deref())?;
    let ctx = commands::Context { cfg, text };
    match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(ctx, a),
        Command::Calibrate(a) => commands::calibrate(ctx, a),
        Command::Validate(a) => commands::validate(ctx, a),
        Command::Report(a) => commands::report(ctx, a),
        Command::Serve(a) => commands::serve(ctx, a),
        Command::PrintConfig => {
            ctx.cfg.validate()?;
            print!("{}", ctx.cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
