use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use rodharness::metrics::{
    cdf_export, kl_divergence, policy_entropy, scaling_exponent_between, variance_collapse, write_cdf_csv,
    ErrorDistribution, PolicyDistribution, SuccessTable,
};
use rodharness::ValidationReport;
use serde::Serialize;

use super::{file_digest, write_output, Context};
use crate::{CliError, ErrorKind, ReportArgs};

#[derive(Serialize)]
struct ReportInput {
    path: PathBuf,
    sha256: String,
    scale: u64,
    policy: String,
    runs: usize,
}

#[derive(Serialize)]
struct BandExponent {
    band_pct: f64,
    /// `S_large / S_small`, kept even when the exponent is undefined.
    ratio: Option<f64>,
    exponent: Option<f64>,
    note: Option<String>,
}

#[derive(Serialize)]
struct ScalePair {
    from_scale: u64,
    to_scale: u64,
    decades: f64,
    bands: Vec<BandExponent>,
}

#[derive(Serialize)]
struct Collapse {
    from_scale: u64,
    to_scale: u64,
    small_variance: Option<f64>,
    large_variance: Option<f64>,
    ratio: Option<f64>,
    unbounded: bool,
}

#[derive(Serialize)]
struct PerReport {
    scale: u64,
    runtime_distribution: Option<[f64; 4]>,
    kl_to_mixture: Option<f64>,
    policy_entropy: Option<f64>,
    severe_failures: usize,
    failure_concentration: Option<f64>,
    cdf_file: String,
}

#[derive(Serialize)]
struct Analysis {
    reports: Vec<ReportInput>,
    bands: Vec<f64>,
    mixture: [f64; 4],
    success_table: SuccessTable,
    /// Consecutive scale pairs plus the first-to-last pair.
    exponents: Vec<ScalePair>,
    variance_collapse: Vec<Collapse>,
    per_report: Vec<PerReport>,
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    let mut p: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    if n > 2 {
        p.push((0, n - 1));
    }
    p
}

pub fn report(ctx: Context, args: ReportArgs) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    cfg.validate()?;
    if args.reports.len() != args.scales.len() {
        return Err(CliError::config(format!(
            "{} reports but {} scales",
            args.reports.len(),
            args.scales.len()
        )));
    }
    if args.scales.windows(2).any(|w| w[0] >= w[1]) || args.scales.first() == Some(&0) {
        return Err(CliError::config("scales must be positive and strictly increasing"));
    }

    let mut reports = Vec::new();
    let mut inputs = Vec::new();
    for (path, &scale) in args.reports.iter().zip(&args.scales) {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read report {}: {e}", path.display())))?;
        let r = ValidationReport::from_json(&text)
            .map_err(|e| CliError::config(format!("report {}: {e}", path.display())))?;
        r.check_invariants()
            .map_err(|e| CliError::config(format!("report {}: {e}", path.display())))?;
        inputs.push(ReportInput {
            path: path.clone(),
            sha256: file_digest(path)?,
            scale,
            policy: r.policy.clone(),
            runs: r.runs,
        });
        reports.push(r);
    }
    let bands = reports[0].config.tolerance_bands.clone();
    for (r, p) in reports.iter().zip(&args.reports).skip(1) {
        if r.config.tolerance_bands != bands {
            return Err(CliError::config(format!(
                "report {} uses bands {:?}, expected {:?}",
                p.display(),
                r.config.tolerance_bands,
                bands
            )));
        }
    }

    let per_scale: Vec<&[_]> = reports.iter().map(|r| r.results.as_slice()).collect();
    let table = SuccessTable::new(args.scales.clone(), bands.clone(), &per_scale)
        .map_err(|e| CliError::from_core(e, ErrorKind::Internal))?;

    let mut exponents = Vec::new();
    let mut collapses = Vec::new();
    let dists: Vec<ErrorDistribution> = reports.iter().map(|r| ErrorDistribution::from_results(&r.results)).collect();
    for (a, b) in pairs(reports.len()) {
        let (sa, sb) = (args.scales[a], args.scales[b]);
        let bands_out = bands
            .iter()
            .enumerate()
            .map(|(j, &band)| {
                let (ra, rb) = (table.rates[a][j], table.rates[b][j]);
                let ratio = (ra > 0.0).then(|| rb / ra);
                match scaling_exponent_between(ra, rb, sa as f64, sb as f64) {
                    Ok(x) => BandExponent {
                        band_pct: band,
                        ratio,
                        exponent: Some(x),
                        note: None,
                    },
                    Err(e) => BandExponent {
                        band_pct: band,
                        ratio,
                        exponent: None,
                        note: Some(e.to_string()),
                    },
                }
            })
            .collect();
        exponents.push(ScalePair {
            from_scale: sa,
            to_scale: sb,
            decades: (sb as f64 / sa as f64).log10(),
            bands: bands_out,
        });
        let vc = variance_collapse(&dists[a], &dists[b]).ok();
        collapses.push(Collapse {
            from_scale: sa,
            to_scale: sb,
            small_variance: dists[a].variance(),
            large_variance: dists[b].variance(),
            ratio: vc.filter(|v| !v.unbounded).map(|v| v.ratio),
            unbounded: vc.is_some_and(|v| v.unbounded),
        });
    }

    let out_dir = args.out.unwrap_or_else(|| cfg.out_dir.join("analysis"));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::internal(format!("cannot create {}: {e}", out_dir.display())))?;
    let mixture = PolicyDistribution::new(cfg.corpus.mixture).map_err(|e| CliError::config(e.to_string()))?;
    let mut per_report = Vec::new();
    for (r, &scale) in reports.iter().zip(&args.scales) {
        let runtime = r.runtime_distribution.map(PolicyDistribution);
        let kl = match &runtime {
            Some(p) => Some(kl_divergence(p, &mixture).map_err(|e| CliError::config(e.to_string()))?),
            None => None,
        };
        let cdf_file = format!("cdf-{scale}.csv");
        let errors: Vec<f64> = r.results.iter().map(|x| x.error_pct).filter(|e| e.is_finite()).collect();
        let f = File::create(out_dir.join(&cdf_file))?;
        write_cdf_csv(&cdf_export(&errors), BufWriter::new(f)).map_err(|e| CliError::from_core(e, ErrorKind::Internal))?;
        per_report.push(PerReport {
            scale,
            runtime_distribution: r.runtime_distribution,
            kl_to_mixture: kl,
            policy_entropy: runtime.as_ref().map(policy_entropy),
            severe_failures: r.severe_failures,
            failure_concentration: r.failure_concentration,
            cdf_file,
        });
    }
    let f = File::create(out_dir.join("success_table.csv"))?;
    table
        .write_csv(BufWriter::new(f))
        .map_err(|e| CliError::from_core(e, ErrorKind::Internal))?;

    let analysis = Analysis {
        reports: inputs,
        bands,
        mixture: cfg.corpus.mixture,
        success_table: table,
        exponents,
        variance_collapse: collapses,
        per_report,
    };
    let text = serde_json::to_string_pretty(&analysis).map_err(|e| CliError::internal(e.to_string()))?;
    let path = out_dir.join("analysis.json");
    write_output(&path, format!("{text}\n").as_bytes())?;
    println!("{} reports analysed -> {}", reports.len(), path.display());
    Ok(())
}
