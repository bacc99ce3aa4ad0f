//! Run-health checks: insertion-index uniformity, volumes against an
//! analytic X(λ), and agreement between two runs.
//!
//! Insertion indexes are pooled as fractions r/n of the ranks available at
//! birth, where n is the survivor count at that contour plus one. Expected
//! bin counts are computed exactly for each n, so the χ² test is valid when
//! n varies along a dynamic run.

use crate::error::{Error, Result};
use crate::estimators::{log_volume_std, EvidenceReport, VolumeAssignment};
use crate::problems::Problem;
use crate::stats;
use crate::trace::RunTrace;

pub const INSERTION_BINS: usize = 32;
pub const FAIL_P: f64 = 1e-3;
pub const WARN_P: f64 = 0.05;
/// Width of the volume envelope in accumulated standard deviations.
pub const VOLUME_SIGMAS: f64 = 5.0;
/// Fraction of dead points that must lie inside the volume envelope.
pub const VOLUME_COVERAGE: f64 = 0.99;
/// Normalized log Z difference above which two runs disagree.
pub const CONSISTENCY_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Warn => "warn",
            Verdict::Fail => "fail",
        }
    }

    fn from_p(p: f64) -> Self {
        if p < FAIL_P {
            Verdict::Fail
        } else if p < WARN_P {
            Verdict::Warn
        } else {
            Verdict::Pass
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticReport {
    pub insertion_p_value_global: Option<f64>,
    /// Uncorrected p-value of each rolling block, in birth order.
    pub insertion_p_values_rolling: Vec<f64>,
    /// Smallest block p-value times the number of blocks, capped at 1.
    pub insertion_p_value_rolling: Option<f64>,
    /// (λ, log X estimated, log X true) per checked dead point.
    pub volume_deviations: Option<Vec<(f64, f64, f64)>>,
    pub volume_fraction_inside: Option<f64>,
    pub verdict: Verdict,
    pub fail_p: f64,
    pub warn_p: f64,
    pub warnings: Vec<String>,
}

impl DiagnosticReport {
    fn empty() -> Self {
        DiagnosticReport {
            insertion_p_value_global: None,
            insertion_p_values_rolling: Vec::new(),
            insertion_p_value_rolling: None,
            volume_deviations: None,
            volume_fraction_inside: None,
            verdict: Verdict::Pass,
            fail_p: FAIL_P,
            warn_p: WARN_P,
            warnings: Vec::new(),
        }
    }
}

/// χ² p-value of `(rank, slots)` pairs pooled into `bins` bins of
/// rank/slots. Bins with zero expectation are dropped.
fn chi2_pooled(indexes: &[(usize, usize)], bins: usize) -> f64 {
    let mut observed = vec![0.0; bins];
    let mut expected = vec![0.0; bins];
    let bin_of = |r: usize, n: usize| (r * bins / n).min(bins - 1);
    let mut per_slots: std::collections::BTreeMap<usize, usize> = Default::default();
    for &(r, n) in indexes {
        observed[bin_of(r, n)] += 1.0;
        *per_slots.entry(n).or_default() += 1;
    }
    for (&n, &count) in &per_slots {
        // Each rank has probability 1/n; add up ranks per bin.
        let share = count as f64 / n as f64;
        for r in 0..n {
            expected[bin_of(r, n)] += share;
        }
    }
    let mut chi2 = 0.0;
    let mut used = 0usize;
    for (o, e) in observed.iter().zip(&expected) {
        if *e > 0.0 {
            chi2 += (o - e) * (o - e) / e;
            used += 1;
        }
    }
    if used < 2 {
        return 1.0;
    }
    stats::chi2_sf(chi2, (used - 1) as f64)
}

/// Insertion test over explicit `(rank, slots)` pairs given in birth order,
/// with rolling blocks of `block` indexes.
pub fn insertion_test_indexes(indexes: &[(usize, usize)], block: usize) -> Result<DiagnosticReport> {
    if block == 0 {
        return Err(Error::InputDomain("block length must be positive".into()));
    }
    if let Some(&(r, n)) = indexes.iter().find(|(r, n)| r >= n) {
        return Err(Error::InputDomain(format!("insertion index {r} outside 0..{n}")));
    }
    let mut report = DiagnosticReport::empty();
    if indexes.is_empty() {
        report.warnings.push("no insertion indexes recorded".into());
        report.verdict = Verdict::Warn;
        return Ok(report);
    }
    if indexes.len() < 10 * block {
        report.warnings.push(format!(
            "only {} insertion indexes for blocks of {block}; the test has little power",
            indexes.len()
        ));
    }
    let global = chi2_pooled(indexes, INSERTION_BINS);
    let block_bins = (block / 5).clamp(2, INSERTION_BINS);
    let rolling: Vec<f64> = indexes
        .chunks(block)
        .filter(|c| c.len() == block)
        .map(|c| chi2_pooled(c, block_bins))
        .collect();
    let corrected = rolling
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.min(p))))
        .map(|m| (m * rolling.len() as f64).min(1.0));
    let worst = corrected.map_or(global, |c| c.min(global));
    report.verdict = Verdict::from_p(worst);
    report.insertion_p_value_global = Some(global);
    report.insertion_p_values_rolling = rolling;
    report.insertion_p_value_rolling = corrected;
    Ok(report)
}

/// Insertion indexes of a trace as `(rank, slots)` in birth order.
pub fn trace_insertion_indexes(trace: &RunTrace) -> Vec<(usize, usize)> {
    let idx = trace.recomputed_insertion_indexes();
    let mut pairs: Vec<(f64, u64, usize, usize)> = trace
        .particles()
        .zip(idx)
        .filter_map(|(p, i)| {
            i.map(|r| {
                (
                    p.birth_log_like.ln(),
                    p.id,
                    r,
                    trace.insertion_slots(p.birth_log_like),
                )
            })
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    pairs.into_iter().map(|(_, _, r, n)| (r, n)).collect()
}

/// Insertion-index uniformity of a run, with rolling blocks as long as the
/// median live-point count.
pub fn insertion_test(trace: &RunTrace) -> Result<DiagnosticReport> {
    if trace.dead.is_empty() {
        return Err(Error::InputDomain("insertion test needs dead points".into()));
    }
    let counts: Vec<f64> = trace.dead.iter().map(|d| d.n_active as f64).collect();
    let nlive = stats::median(&counts).round().max(1.0) as usize;
    insertion_test_indexes(&trace_insertion_indexes(trace), nlive)
}

/// Compares estimated log X at each death contour with the problem's
/// analytic X(λ). Contours outside the oracle's domain are skipped.
pub fn volume_check(
    trace: &RunTrace,
    volumes: &VolumeAssignment,
    problem: &Problem,
) -> Result<DiagnosticReport> {
    let oracle = problem
        .oracle
        .volume
        .as_ref()
        .ok_or_else(|| Error::Unsupported(format!("{} has no volume oracle", problem.name)))?;
    if volumes.log_x.len() != trace.dead.len() {
        return Err(Error::InputDomain("volumes do not match the trace".into()));
    }
    let sigma = log_volume_std(trace);
    let mut deviations = vec![(f64::NEG_INFINITY, 0.0, 0.0)];
    let mut inside = 1usize;
    for (k, d) in trace.dead.iter().enumerate() {
        let lambda = d.particle.log_like.ln();
        let Some(x) = oracle(lambda) else { continue };
        let truth = x.ln();
        let est = volumes.log_x[k];
        if (est - truth).abs() <= VOLUME_SIGMAS * sigma[k] {
            inside += 1;
        }
        deviations.push((lambda, est, truth));
    }
    let fraction = inside as f64 / deviations.len() as f64;
    let mut report = DiagnosticReport::empty();
    if deviations.len() == 1 {
        report
            .warnings
            .push("no death contour lies in the oracle's domain".into());
    }
    report.verdict = if fraction < VOLUME_COVERAGE {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    report.volume_deviations = Some(deviations);
    report.volume_fraction_inside = Some(fraction);
    Ok(report)
}

/// |log Z_a − log Z_b| / √(σ_a² + σ_b²).
pub fn two_run_consistency(a: &EvidenceReport, b: &EvidenceReport) -> Result<f64> {
    if a.problem_fingerprint != b.problem_fingerprint {
        return Err(Error::Incompatible(format!(
            "reports are for different problems: {} vs {}",
            a.problem_fingerprint, b.problem_fingerprint
        )));
    }
    let diff = (a.log_z.ln() - b.log_z.ln()).abs();
    if diff == 0.0 {
        return Ok(0.0);
    }
    Ok(diff / (a.sigma_log_z.powi(2) + b.sigma_log_z.powi(2)).sqrt())
}
