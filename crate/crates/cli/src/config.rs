//! Harness configuration file. Every key is optional; missing keys take the
//! values shown by `rodharness config`, which prints the effective file.

use std::path::{Path, PathBuf};

use rodharness::execution::WindowMode;
use rodharness::kinetics::{BiasMode, KineticsParams, RodBankConfig};
use rodharness::metrics::PolicyDistribution;
use rodharness::scenario::OracleSettings;
use rodharness::{Engine, RunConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUT_DIR_ENV: &str = "RODHARNESS_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub out_dir: PathBuf,
    /// Worker threads for generation and validation batches.
    pub parallel: usize,
    pub engine: EngineSection,
    pub run: RunSection,
    pub corpus: CorpusSection,
    pub policy: PolicySection,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            parallel: 1,
            engine: EngineSection::default(),
            run: RunSection::default(),
            corpus: CorpusSection::default(),
            policy: PolicySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub kinetics: KineticsParams,
    pub banks: [RodBankConfig; 2],
    pub bias: BiasMode,
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = Engine::default();
        Self {
            kinetics: e.params,
            banks: e.banks,
            bias: e.bias_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub horizon: f64,
    pub dt: f64,
    pub window: WindowMode,
    pub tolerance_bands: Vec<f64>,
    pub severe_threshold: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        let r = RunConfig::default();
        Self {
            horizon: r.horizon,
            dt: r.dt,
            window: r.window,
            tolerance_bands: r.tolerance_bands,
            severe_threshold: r.severe_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub sizes: Vec<usize>,
    /// single_b1, single_b2, simultaneous, sequential.
    pub mixture: [f64; 4],
    pub seed: u64,
    pub oracle: OracleSettings,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            sizes: vec![1000, 10_000, 100_000],
            mixture: PolicyDistribution::training_mixture().0,
            seed: 20240601,
            oracle: OracleSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub kind: String,
    /// Proportional calibration file; calibrated on the fly when unset.
    pub calibration: Option<PathBuf>,
    /// Corpus the nearest-neighbor policy copies from.
    pub train_corpus: Option<PathBuf>,
    /// External policy: program and arguments, `tcp://host:port`, or
    /// `conformance-loopback`.
    pub command: Vec<String>,
    pub timeout_ms: u64,
    pub sessions: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            kind: "oracle".into(),
            calibration: None,
            train_corpus: None,
            command: Vec::new(),
            timeout_ms: 30_000,
            sessions: 1,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::config(msg)
}

impl HarnessConfig {
    /// Reads `path` (defaults when `None`), then applies the output
    /// directory override from the environment.
    pub fn load(path: Option<&Path>) -> Result<(Self, Option<String>), CliError> {
        let (mut cfg, text) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| bad(format!("cannot read config {}: {e}", p.display())))?;
                let cfg: HarnessConfig =
                    toml::from_str(&text).map_err(|e| bad(format!("config {}: {e}", p.display())))?;
                (cfg, Some(text))
            }
            None => (HarnessConfig::default(), None),
        };
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.out_dir = PathBuf::from(dir);
        }
        if let Some(base) = path.and_then(Path::parent) {
            cfg.resolve_relative(base);
        }
        Ok((cfg, text))
    }

    /// Policy input paths in the file are relative to the file itself.
    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.policy.calibration);
        fix(&mut self.policy.train_corpus);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.parallel == 0 {
            return Err(bad("parallel must be at least 1"));
        }
        self.engine()?;
        self.run_config()
            .validate()
            .map_err(|e| bad(format!("[run] {e}")))?;
        let m = &self.corpus.mixture;
        if m.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (m.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(bad("[corpus] mixture must be four nonnegative weights summing to 1"));
        }
        if self.corpus.sizes.iter().any(|&n| n < 10) {
            return Err(bad("[corpus] sizes must be at least 10"));
        }
        let o = &self.corpus.oracle;
        if !(o.accept_pct > 0.0 && o.accept_pct <= 0.5) {
            return Err(bad("[corpus.oracle] accept_pct must be in (0, 0.5]"));
        }
        if o.max_evaluations == 0 {
            return Err(bad("[corpus.oracle] max_evaluations must be positive"));
        }
        if self.policy.sessions == 0 || self.policy.timeout_ms == 0 {
            return Err(bad("[policy] sessions and timeout_ms must be positive"));
        }
        for p in [&self.policy.calibration, &self.policy.train_corpus].into_iter().flatten() {
            if !p.exists() {
                return Err(bad(format!("[policy] path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn engine(&self) -> Result<Engine, CliError> {
        let e = &self.engine;
        Engine::new(e.kinetics.clone(), e.banks, e.bias).map_err(|err| bad(format!("[engine] {err}")))
    }

    pub fn run_config(&self) -> RunConfig {
        let r = &self.run;
        RunConfig {
            horizon: r.horizon,
            dt: r.dt,
            window: r.window,
            tolerance_bands: r.tolerance_bands.clone(),
            severe_threshold: r.severe_threshold,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}
