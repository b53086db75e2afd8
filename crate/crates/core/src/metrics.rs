//! Outcome metrics: tolerance-band success, cross-scale scaling exponents,
//! quantiles, variance collapse, divergence and entropy of actuation-family
//! distributions, failure concentration, regime stratification and the
//! empirical CDF.
//!
//! Logarithms are natural throughout; divergences and entropies are in nats.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::actuation::ActuationFamily;
use crate::error::{domain, Result};
use crate::execution::RunResult;
use crate::scenario::Regime;

/// Fraction of runs whose error is within `band` percent. Runs with the
/// infinite error sentinel count as failures.
pub fn success_rate(results: &[RunResult], band: f64) -> Result<f64> {
    if results.is_empty() {
        return Err(domain("success rate of an empty batch"));
    }
    if !(band > 0.0) {
        return Err(domain(format!("tolerance band must be positive, got {band}")));
    }
    let ok = results.iter().filter(|r| r.error_pct <= band).count();
    Ok(ok as f64 / results.len() as f64)
}

/// Growth exponent of success between two corpus scales `scale_small` and
/// `scale_large`: `ln(S_large / S_small)` per decade of data.
pub fn scaling_exponent_between(s_small: f64, s_large: f64, scale_small: f64, scale_large: f64) -> Result<f64> {
    if !(s_small > 0.0 && s_small <= 1.0) {
        return Err(domain(format!(
            "scaling exponent undefined for small-scale success {s_small}"
        )));
    }
    if !(s_large > 0.0 && s_large <= 1.0) {
        return Err(domain(format!(
            "scaling exponent undefined for large-scale success {s_large}"
        )));
    }
    if !(scale_small > 0.0 && scale_large > scale_small) {
        return Err(domain("scales must be positive and increasing"));
    }
    let decades = (scale_large / scale_small).log10();
    Ok((s_large / s_small).ln() / decades)
}

/// [`scaling_exponent_between`] for two scales one decade apart.
pub fn scaling_exponent(s_small: f64, s_large: f64) -> Result<f64> {
    scaling_exponent_between(s_small, s_large, 1.0, 10.0)
}

/// Lower order statistic realizing `inf { e : F(e) >= q }`.
pub fn quantile(errors: &[f64], q: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(domain("quantile of an empty sample"));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(domain(format!("quantile level must be in (0, 1], got {q}")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Smallest k with k / n >= q, evaluated exactly as the definition reads.
    let mut k = ((q * n as f64).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / n as f64 >= q {
        k -= 1;
    }
    while k < n && (k as f64 / n as f64) < q {
        k += 1;
    }
    Ok(sorted[k - 1])
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

pub fn population_variance(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    Some(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64)
}

/// Finite errors of a batch plus the number of sentinel runs left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub errors: Vec<f64>,
    pub excluded_count: usize,
}

impl ErrorDistribution {
    pub fn from_results(results: &[RunResult]) -> Self {
        let errors: Vec<f64> = results
            .iter()
            .map(|r| r.error_pct)
            .filter(|e| e.is_finite())
            .collect();
        let excluded_count = results.len() - errors.len();
        Self {
            errors,
            excluded_count,
        }
    }

    pub fn variance(&self) -> Option<f64> {
        population_variance(&self.errors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceCollapse {
    pub ratio: f64,
    /// Set when the large-scale variance is zero and the ratio is infinite.
    pub unbounded: bool,
}

/// Ratio of small-scale to large-scale population variance.
pub fn variance_collapse(small: &ErrorDistribution, large: &ErrorDistribution) -> Result<VarianceCollapse> {
    let num = small
        .variance()
        .ok_or_else(|| domain("variance collapse needs a nonempty small-scale sample"))?;
    let den = large
        .variance()
        .ok_or_else(|| domain("variance collapse needs a nonempty large-scale sample"))?;
    if den == 0.0 {
        return Ok(VarianceCollapse {
            ratio: f64::INFINITY,
            unbounded: true,
        });
    }
    Ok(VarianceCollapse {
        ratio: num / den,
        unbounded: false,
    })
}

/// Probability over the four actuation families, indexed by
/// [`ActuationFamily::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyDistribution(pub [f64; 4]);

impl PolicyDistribution {
    pub fn new(p: [f64; 4]) -> Result<Self> {
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(domain("distribution entries must be finite and nonnegative"));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(domain(format!("distribution sums to {total}, not 1")));
        }
        Ok(Self(p))
    }

    pub fn from_counts(counts: [usize; 4]) -> Option<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return None;
        }
        Some(Self(counts.map(|c| c as f64 / total as f64)))
    }

    /// The generation mixture (30/30/30/10).
    pub fn training_mixture() -> Self {
        Self([0.30, 0.30, 0.30, 0.10])
    }

    pub fn get(&self, family: ActuationFamily) -> f64 {
        self.0[family.index()]
    }
}

/// `sum p ln(p / q)` with `0 ln 0 = 0`.
pub fn kl_divergence(p_runtime: &PolicyDistribution, p_train: &PolicyDistribution) -> Result<f64> {
    let mut kl = 0.0;
    for f in ActuationFamily::ALL {
        let (p, q) = (p_runtime.get(f), p_train.get(f));
        if p == 0.0 {
            continue;
        }
        if q <= 0.0 {
            return Err(domain(format!(
                "training distribution has no support on {f} where runtime mass is {p}"
            )));
        }
        kl += p * (p / q).ln();
    }
    Ok(kl)
}

pub fn policy_entropy(p: &PolicyDistribution) -> f64 {
    let h = -p.0.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
    h + 0.0 // no negative zero
}

/// Largest per-family share of severe failures; `None` when there are none.
pub fn failure_concentration(severe_counts: [usize; 4]) -> Option<f64> {
    let total: usize = severe_counts.iter().sum();
    if total == 0 {
        return None;
    }
    let max = *severe_counts.iter().max().expect("four entries");
    Some(max as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub regime: Regime,
    pub runs: usize,
    pub successes: Vec<usize>,
    pub rates: Vec<f64>,
}

/// Success per regime bin at every band. Bins always appear in the order
/// small, medium, large, including empty ones.
pub fn stratify_by_regime(results: &[RunResult], bands: &[f64]) -> Result<Vec<RegimeRow>> {
    let mut rows: Vec<RegimeRow> = Regime::ALL
        .iter()
        .map(|&regime| RegimeRow {
            regime,
            runs: 0,
            successes: vec![0; bands.len()],
            rates: vec![0.0; bands.len()],
        })
        .collect();
    for r in results {
        let regime = Regime::of(r.p_target_delta)?;
        let row = &mut rows[regime.index()];
        row.runs += 1;
        for (s, &band) in row.successes.iter_mut().zip(bands) {
            if r.error_pct <= band {
                *s += 1;
            }
        }
    }
    for row in &mut rows {
        if row.runs > 0 {
            row.rates = row
                .successes
                .iter()
                .map(|&s| s as f64 / row.runs as f64)
                .collect();
        }
    }
    Ok(rows)
}

/// Right-continuous empirical CDF: one `(error, fraction <= error)` pair
/// per distinct value, ascending.
pub fn cdf_export(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => out.push((e, frac)),
        }
    }
    out
}

/// Writes CDF pairs as CSV with header `error_pct,cumulative_fraction`.
pub fn write_cdf_csv<W: Write>(pairs: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["error_pct", "cumulative_fraction"])?;
    for (e, f) in pairs {
        w.write_record([e.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Success rates per corpus scale and tolerance band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub scales: Vec<u64>,
    pub bands: Vec<f64>,
    /// `rates[scale][band]`.
    pub rates: Vec<Vec<f64>>,
    pub successes: Vec<Vec<usize>>,
    pub runs: Vec<usize>,
}

impl SuccessTable {
    pub fn new(scales: Vec<u64>, bands: Vec<f64>, per_scale: &[&[RunResult]]) -> Result<Self> {
        if scales.len() != per_scale.len() {
            return Err(domain("one result set per scale required"));
        }
        let mut rates = Vec::new();
        let mut successes = Vec::new();
        let mut runs = Vec::new();
        for results in per_scale {
            let mut r = Vec::new();
            let mut s = Vec::new();
            for &band in &bands {
                r.push(success_rate(results, band)?);
                s.push(results.iter().filter(|x| x.error_pct <= band).count());
            }
            rates.push(r);
            successes.push(s);
            runs.push(results.len());
        }
        Ok(Self {
            scales,
            bands,
            rates,
            successes,
            runs,
        })
    }

    /// Header `scale,runs,band_pct,successes,rate`, one row per cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(["scale", "runs", "band_pct", "successes", "rate"])?;
        for (i, scale) in self.scales.iter().enumerate() {
            for (j, band) in self.bands.iter().enumerate() {
                w.write_record([
                    scale.to_string(),
                    self.runs[i].to_string(),
                    band.to_string(),
                    self.successes[i][j].to_string(),
                    self.rates[i][j].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::Writer::from_writer(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::execution::RunResult;
    use proptest::prelude::*;

    fn with_errors(errs: &[f64]) -> Vec<RunResult> {
        errs.iter()
            .enumerate()
            .map(|(i, &e)| RunResult::synthetic(i as u64, -0.05, e, &[1.0, 2.0, 3.0, 5.0, 10.0], 10.0))
            .collect()
    }

    #[test]
    fn success_rate_examples() {
        assert!((success_rate(&with_errors(&[0.5, 3.0, 12.0]), 5.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let invalid = with_errors(&[f64::INFINITY, f64::INFINITY]);
        assert_eq!(success_rate(&invalid, 10.0).unwrap(), 0.0);
        assert_eq!(success_rate(&with_errors(&[1.0, 9.9]), 10.0).unwrap(), 1.0);
        assert!(success_rate(&[], 5.0).is_err());
        assert!(success_rate(&with_errors(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn scaling_exponent_reference_values() {
        assert!((scaling_exponent(0.839, 0.974).unwrap() - 0.149).abs() < 1e-3);
        assert!((scaling_exponent(0.262, 0.920).unwrap() - 1.256).abs() < 1e-3);
        assert_eq!(scaling_exponent(0.4, 0.4).unwrap(), 0.0);
        assert!(scaling_exponent(0.0, 0.5).is_err());
        // Two decades halve the per-decade exponent.
        let two = scaling_exponent_between(0.262, 0.920, 1e3, 1e5).unwrap();
        assert!((two - 0.5 * (0.920f64 / 0.262).ln()).abs() < 1e-12);
    }

    #[test]
    fn quantile_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&xs, 0.5).unwrap(), 3.0);
        assert_eq!(quantile(&xs, 0.95).unwrap(), 5.0);
        assert_eq!(quantile(&xs, 0.6).unwrap(), 3.0);
        assert_eq!(quantile(&xs, 0.2).unwrap(), 1.0);
        for q in [0.01, 0.5, 1.0] {
            assert_eq!(quantile(&[7.0], q).unwrap(), 7.0);
        }
        assert!(quantile(&[], 0.5).is_err());
        assert!(quantile(&xs, 0.0).is_err());
    }

    #[test]
    fn variance_collapse_examples() {
        // Two-point samples with population variance 250 and 0.5.
        let spread = |v: f64| ErrorDistribution {
            errors: vec![10.0 - v.sqrt(), 10.0 + v.sqrt()],
            excluded_count: 0,
        };
        let c = variance_collapse(&spread(250.0), &spread(0.5)).unwrap();
        assert!((c.ratio - 500.0).abs() < 1e-9);
        assert!(!c.unbounded);
        let same = variance_collapse(&spread(3.0), &spread(3.0)).unwrap();
        assert!((same.ratio - 1.0).abs() < 1e-12);
        let flat = ErrorDistribution {
            errors: vec![0.3; 4],
            excluded_count: 0,
        };
        let c = variance_collapse(&spread(3.0), &flat).unwrap();
        assert!(c.unbounded && c.ratio.is_infinite());
    }

    #[test]
    fn kl_examples() {
        let u = PolicyDistribution([0.25; 4]);
        assert_eq!(kl_divergence(&u, &u).unwrap(), 0.0);
        let point = PolicyDistribution([1.0, 0.0, 0.0, 0.0]);
        assert!((kl_divergence(&point, &u).unwrap() - 4f64.ln()).abs() < 1e-12);
        let p = PolicyDistribution::new([0.7610, 0.2000, 0.0375, 0.0015]).unwrap();
        let q = PolicyDistribution::training_mixture();
        let direct = 0.7610 * (0.7610f64 / 0.30).ln()
            + 0.2000 * (0.2000f64 / 0.30).ln()
            + 0.0375 * (0.0375f64 / 0.30).ln()
            + 0.0015 * (0.0015f64 / 0.10).ln();
        assert!((kl_divergence(&p, &q).unwrap() - direct).abs() < 1e-12);
        let holey = PolicyDistribution([0.5, 0.5, 0.0, 0.0]);
        let err = kl_divergence(&u, &holey).unwrap_err();
        assert!(err.to_string().contains("simultaneous"));
    }

    #[test]
    fn entropy_examples() {
        assert!((policy_entropy(&PolicyDistribution([0.25; 4])) - 1.3863).abs() < 1e-4);
        assert_eq!(policy_entropy(&PolicyDistribution([1.0, 0.0, 0.0, 0.0])), 0.0);
        assert!((policy_entropy(&PolicyDistribution([0.5, 0.5, 0.0, 0.0])) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn failure_concentration_examples() {
        let c = failure_concentration([100, 576, 60, 35]).unwrap();
        assert!((c - 0.747).abs() < 5e-4);
        let c = failure_concentration([9, 8, 68, 4]).unwrap();
        assert!((c - 0.764).abs() < 5e-4);
        assert_eq!(failure_concentration([0; 4]), None);
    }

    #[test]
    fn distribution_validation() {
        assert!(PolicyDistribution::new([0.5, 0.5, 0.1, 0.0]).is_err());
        assert!(PolicyDistribution::new([1.5, -0.5, 0.0, 0.0]).is_err());
        assert_eq!(PolicyDistribution::from_counts([0; 4]), None);
        assert_eq!(
            PolicyDistribution::from_counts([1, 1, 2, 0]).unwrap().0,
            [0.25, 0.25, 0.5, 0.0]
        );
    }

    #[test]
    fn regime_stratification() {
        let bands = [1.0, 5.0];
        let mut results = with_errors(&[0.5, 3.0, 8.0]);
        results[0].p_target_delta = -0.05;
        results[1].p_target_delta = -0.30;
        results[2].p_target_delta = 0.2;
        let rows = stratify_by_regime(&results, &bands).unwrap();
        assert_eq!(rows[0].regime, Regime::Small);
        assert_eq!(rows[0].runs, 1);
        assert_eq!(rows[2].runs, 1);
        assert_eq!(rows[2].successes, vec![0, 1]);
        assert_eq!(rows[1].successes, vec![0, 0]);
        assert_eq!(rows.iter().map(|r| r.runs).sum::<usize>(), 3);
        results[0].p_target_delta = 0.7;
        assert!(stratify_by_regime(&results, &bands).is_err());
    }

    #[test]
    fn cdf_examples() {
        let c = cdf_export(&[2.0, 1.0, 2.0, 4.0]);
        assert_eq!(c, vec![(1.0, 0.25), (2.0, 0.75), (4.0, 1.0)]);
        assert_eq!(cdf_export(&[3.0]), vec![(3.0, 1.0)]);
        let mut buf = Vec::new();
        write_cdf_csv(&c, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "error_pct,cumulative_fraction\n1,0.25\n2,0.75\n4,1\n"
        );
    }

    fn dist() -> impl Strategy<Value = PolicyDistribution> {
        proptest::array::uniform4(0.0f64..1.0).prop_filter_map("nonzero", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| PolicyDistribution(w.map(|x| x / s)))
        })
    }

    proptest! {
        #[test]
        fn kl_nonnegative(p in dist(), q in dist()) {
            prop_assume!(q.0.iter().all(|&x| x > 0.0));
            let kl = kl_divergence(&p, &q).unwrap();
            prop_assert!(kl >= -1e-12);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
        }

        #[test]
        fn entropy_bounded(p in dist()) {
            let h = policy_entropy(&p);
            prop_assert!(h >= 0.0 && h <= 4f64.ln() + 1e-12);
        }

        #[test]
        fn quantile_monotone(xs in proptest::collection::vec(0.0f64..100.0, 1..50), a in 0.01f64..1.0, b in 0.01f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(quantile(&xs, lo).unwrap() <= quantile(&xs, hi).unwrap());
            let max = xs.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(quantile(&xs, 1.0).unwrap(), max);
        }

        #[test]
        fn success_monotone_in_band(xs in proptest::collection::vec(0.0f64..30.0, 1..40), a in 0.1f64..20.0, b in 0.1f64..20.0) {
            let rs = with_errors(&xs);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(success_rate(&rs, lo).unwrap() <= success_rate(&rs, hi).unwrap());
        }

        #[test]
        fn concentration_bounds(c in proptest::array::uniform4(0usize..50)) {
            if let Some(x) = failure_concentration(c) {
                prop_assert!((0.25..=1.0).contains(&x));
            }
        }
    }
}
