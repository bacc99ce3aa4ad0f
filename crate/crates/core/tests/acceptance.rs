//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p nestkit --test acceptance`. Every run uses a fixed
//! seed, so the output is reproducible.

use std::process::ExitCode;
use std::time::Instant;

use rayon::prelude::*;

use nestkit::diagnostics::{insertion_test, volume_check};
use nestkit::engine::{merge, run, PlateauScheme, RunConfig};
use nestkit::estimators::{
    assign_volumes, assign_volumes_with, draw_log_compression, evidence_report, log_evidence,
    mean_energy_and_heat_capacity, posterior_weights, reweight, thermo_evidence, EvidenceReport,
    PlateauTreatment, VolumeMethod,
};
use nestkit::problems::{
    cone_volume, cone_volume_problem, gaussian_shells, harmonic_energy, plateau_problem, truncated_gaussian,
    Problem,
};
use nestkit::rng::RngStream;
use nestkit::samplers::{build_geometry, draw, sample_rejection, SamplerConfig, SamplerKind};
use nestkit::stats::{ks_one_sample, ks_two_sample, mean, median, std_dev};
use nestkit::{LogValue, RunTrace};

const TOY_LOG_Z: f64 = -3.46;
const TOY_H: f64 = 2.46;
const NSIM: usize = 200;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn toy_config(nlive: usize, steps: usize, seed: u64) -> RunConfig {
    let mut sampler = SamplerConfig::new(SamplerKind::Slice, 2);
    sampler.steps = steps;
    let mut c = RunConfig::new(nlive, sampler);
    c.seed = seed;
    c
}

fn report(trace: &RunTrace, seed: u64) -> EvidenceReport {
    evidence_report(trace, &VolumeMethod::MeanLog, NSIM, seed).expect("report")
}

/// Reports of the slice-sampler Gaussian toy runs shared by criteria 1 and 2.
fn toy_reports(n: usize) -> Vec<EvidenceReport> {
    let problem = truncated_gaussian(5.0, 2).unwrap();
    (0..n as u64)
        .into_par_iter()
        .map(|seed| {
            let trace = run(&problem, &toy_config(1000, 5, 1000 + seed)).expect("run");
            report(&trace, seed)
        })
        .collect()
}

fn criterion_1(reports: &[EvidenceReport]) -> Outcome {
    let r = &reports[..20];
    let within = r
        .iter()
        .filter(|x| (x.log_z.ln() - TOY_LOG_Z).abs() <= 3.0 * (x.h / 1000.0).sqrt())
        .count();
    let mean_h = mean(&r.iter().map(|x| x.h).collect::<Vec<_>>());
    let sig: Vec<f64> = r.iter().map(|x| x.sigma_log_z).collect();
    let (smin, smax) = sig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| {
        (a.min(*s), b.max(*s))
    });
    let pass = within >= 19 && (mean_h - TOY_H).abs() <= 0.2 && smin >= 0.035 && smax <= 0.075;
    outcome(
        pass,
        format!(
            "{within}/20 runs within 3·sqrt(H/nlive) of -3.46; mean H = {mean_h:.3}; \
             simulated sigma in [{smin:.4}, {smax:.4}]"
        ),
    )
}

fn criterion_2(reports: &[EvidenceReport]) -> Outcome {
    let log_z: Vec<f64> = reports.iter().map(|r| r.log_z.ln()).collect();
    let empirical = std_dev(&log_z);
    let simulated = mean(&reports.iter().map(|r| r.sigma_log_z).collect::<Vec<_>>());
    let analytic = mean(&reports.iter().map(|r| (r.h / 1000.0).sqrt()).collect::<Vec<_>>());
    let within = |a: f64, b: f64| a / b <= 1.5 && b / a <= 1.5;
    outcome(
        within(empirical, simulated) && within(empirical, analytic),
        format!(
            "{} runs: empirical std {empirical:.4}, mean simulated sigma {simulated:.4}, \
             sqrt(H/nlive) {analytic:.4}",
            reports.len()
        ),
    )
}

fn criterion_3() -> Outcome {
    let n = 1000;
    let draws = 100_000;
    let mut rng = RngStream::new(3, 0).rng();
    let log_t: Vec<f64> = (0..draws).map(|_| draw_log_compression(n, 1, &mut rng)).collect();
    let t: Vec<f64> = log_t.iter().map(|l| l.exp()).collect();
    let se_t = std_dev(&t) / (draws as f64).sqrt();
    let se_l = std_dev(&log_t) / (draws as f64).sqrt();
    let dt = (mean(&t) - n as f64 / (n as f64 + 1.0)) / se_t;
    let dl = (mean(&log_t) + 1.0 / n as f64) / se_l;
    outcome(
        dt.abs() <= 4.0 && dl.abs() <= 4.0,
        format!("mean t off by {dt:.2} s.e., mean log t off by {dl:.2} s.e."),
    )
}

fn criterion_4() -> Outcome {
    let problem = cone_volume_problem(2).unwrap();
    let mut c = RunConfig::new(500, SamplerConfig::new(SamplerKind::Rejection, 2));
    c.seed = 4;
    let trace = run(&problem, &c).expect("run");
    let v = assign_volumes(&trace, &VolumeMethod::MeanLog).unwrap();
    let r = volume_check(&trace, &v, &problem).unwrap();
    let fraction = r.volume_fraction_inside.unwrap();
    let checked = r.volume_deviations.as_ref().map_or(0, |d| d.len());
    outcome(
        fraction >= 0.99,
        format!(
            "{:.2}% of {checked} volume deviations inside the 5-sigma envelope",
            100.0 * fraction
        ),
    )
}

fn criterion_5() -> Outcome {
    let problem = cone_volume_problem(2).unwrap();
    // Contour enclosing a tenth of the prior.
    let lambda = -(0.4 / std::f64::consts::PI);
    debug_assert!((cone_volume(lambda, 2).unwrap() - 0.1).abs() < 1e-12);
    let threshold = LogValue::from_ln(lambda);
    let npts = 10_000u64;
    let rejection: Vec<_> = (0..npts)
        .map(|k| {
            sample_rejection(&problem, threshold, u64::MAX, RngStream::family(5, 1, k))
                .unwrap()
                .0
        })
        .collect();
    let live: Vec<Vec<f64>> = (0..500)
        .map(|k| {
            sample_rejection(&problem, threshold, u64::MAX, RngStream::family(5, 2, k))
                .unwrap()
                .0
                .u
        })
        .collect();
    let reference_l: Vec<f64> = rejection.iter().map(|p| p.log_like.ln()).collect();
    let reference_x: Vec<f64> = rejection.iter().map(|p| p.theta[0]).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (f, kind) in [
        SamplerKind::Ellipsoid,
        SamplerKind::MultiEllipsoid,
        SamplerKind::RandomWalk,
        SamplerKind::Slice,
    ]
    .into_iter()
    .enumerate()
    {
        let cfg = SamplerConfig::new(kind, 2);
        let mut rng = RngStream::family(5, 10 + f as u64, u64::MAX >> 16).rng();
        let (geometry, _) = build_geometry(&cfg, &live, &mut rng).unwrap();
        let drawn: Vec<_> = (0..npts)
            .into_par_iter()
            .map(|k| {
                draw(
                    &problem,
                    threshold,
                    &cfg,
                    &live,
                    &geometry,
                    RngStream::family(5, 10 + f as u64, k),
                    1,
                )
                .unwrap()
                .0
            })
            .collect();
        let l: Vec<f64> = drawn.iter().map(|p| p.log_like.ln()).collect();
        let x: Vec<f64> = drawn.iter().map(|p| p.theta[0]).collect();
        let (_, pl) = ks_two_sample(&l, &reference_l);
        let (_, px) = ks_two_sample(&x, &reference_x);
        pass &= pl > 1e-3 && px > 1e-3;
        parts.push(format!("{}: p(L) = {pl:.3}, p(x) = {px:.3}", kind.name()));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let problem = truncated_gaussian(5.0, 2).unwrap();
    let cfg = |nlive: usize, seed: u64| {
        let mut c = RunConfig::new(nlive, SamplerConfig::new(SamplerKind::Slice, 2));
        c.seed = seed;
        c
    };
    let results: Vec<(f64, f64, bool)> = (0..50u64)
        .into_par_iter()
        .map(|k| {
            let a = run(&problem, &cfg(250, 6000 + 2 * k)).unwrap();
            let b = run(&problem, &cfg(250, 6001 + 2 * k)).unwrap();
            let merged = merge(&[a, b]).unwrap();
            let valid = merged.validate().is_ok();
            let direct = run(&problem, &cfg(500, 7000 + k)).unwrap();
            let lz = |t: &RunTrace| {
                log_evidence(t, &assign_volumes(t, &VolumeMethod::MeanLog).unwrap())
                    .unwrap()
                    .ln()
            };
            (lz(&merged), lz(&direct), valid)
        })
        .collect();
    let merged: Vec<f64> = results.iter().map(|r| r.0).collect();
    let direct: Vec<f64> = results.iter().map(|r| r.1).collect();
    let valid = results.iter().all(|r| r.2);
    let se = ((std_dev(&merged).powi(2) + std_dev(&direct).powi(2)) / 50.0).sqrt();
    let diff = mean(&merged) - mean(&direct);
    outcome(
        diff.abs() <= 2.0 * se && valid,
        format!(
            "merged mean {:.4}, direct mean {:.4}, difference {:.2} combined s.e.; \
             merged traces valid: {valid}",
            mean(&merged),
            mean(&direct),
            diff / se
        ),
    )
}

fn criterion_7() -> Outcome {
    let problem = plateau_problem(&[(0.0, 0.9), (2f64.ln(), 0.09), (3f64.ln(), 0.01)]).unwrap();
    let truth = 1.11f64.ln();
    let results: Vec<(f64, f64)> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let mut c = RunConfig::new(500, SamplerConfig::new(SamplerKind::Rejection, 1));
            c.seed = 7000 + seed;
            c.plateau = PlateauScheme::RemoveAll;
            let t = run(&problem, &c).unwrap();
            let grouped = assign_volumes(&t, &VolumeMethod::MeanLog).unwrap();
            let naive =
                assign_volumes_with(&t, &VolumeMethod::MeanLog, PlateauTreatment::SingleDeath).unwrap();
            (
                log_evidence(&t, &grouped).unwrap().ln(),
                log_evidence(&t, &naive).unwrap().ln(),
            )
        })
        .collect();
    let z: Vec<f64> = results.iter().map(|r| r.0).collect();
    let naive: Vec<f64> = results.iter().map(|r| r.1).collect();
    let se = std_dev(&z) / 50f64.sqrt();
    let se_naive = std_dev(&naive) / 50f64.sqrt();
    let off = (mean(&z) - truth) / se;
    let off_naive = (mean(&naive) - truth) / se_naive.max(f64::MIN_POSITIVE);
    outcome(
        off.abs() <= 2.0 && off_naive.abs() > 3.0,
        format!(
            "grouped mean log Z {:.5} ({off:.2} s.e. from log 1.11); \
             single-death variant {:.5} ({off_naive:.1} s.e.)",
            mean(&z),
            mean(&naive)
        ),
    )
}

fn criterion_8() -> Outcome {
    let problem = harmonic_energy(5.0, 2).unwrap();
    let mut c = RunConfig::new(1000, SamplerConfig::new(SamplerKind::Slice, 2));
    c.seed = 8;
    // Run deep enough that the β = 4 posterior is resolved.
    c.stop_tol = 1e-5;
    let trace = run(&problem, &c).unwrap();
    let v = assign_volumes(&trace, &VolumeMethod::MeanLog).unwrap();
    let grid = [1.0, 2.0, 4.0];
    let mut pass = true;
    let mut parts = Vec::new();
    for &beta in &grid {
        let est = thermo_evidence(&trace, &v, beta).unwrap().ln();
        let sims: Vec<f64> = (0..NSIM as u64)
            .into_par_iter()
            .map(|k| {
                let s = assign_volumes(&trace, &VolumeMethod::Simulated { seed: 8, stream: k }).unwrap();
                thermo_evidence(&trace, &s, beta).unwrap().ln()
            })
            .collect();
        let sigma = std_dev(&sims);
        let truth = (2.0 * std::f64::consts::PI / beta / 100.0).ln();
        let dev = (est - truth) / sigma;
        pass &= dev.abs() <= 3.0;
        parts.push(format!("beta={beta}: {dev:+.2} sigma"));
    }
    let thermo = mean_energy_and_heat_capacity(&trace, &v, &grid).unwrap();
    for t in &thermo {
        pass &= (t.heat_capacity - 1.0).abs() <= 0.1;
    }
    parts.push(format!(
        "C_V = {}",
        thermo
            .iter()
            .map(|t| format!("{:.3}", t.heat_capacity))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    outcome(pass, parts.join("; "))
}

fn insertion_p(problem: &Problem, config: &RunConfig) -> f64 {
    let t = run(problem, config).unwrap();
    insertion_test(&t).unwrap().insertion_p_value_global.unwrap()
}

fn criterion_9() -> Outcome {
    let cone = cone_volume_problem(2).unwrap();
    let exact: Vec<f64> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let mut c = RunConfig::new(100, SamplerConfig::new(SamplerKind::Rejection, 2));
            c.seed = 9000 + seed;
            insertion_p(&cone, &c)
        })
        .collect();
    let (_, meta) = ks_one_sample(&exact, |x| x.clamp(0.0, 1.0));
    let shells = gaussian_shells();
    let crippled: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let mut s = SamplerConfig::new(SamplerKind::Slice, 2);
            s.steps = 1;
            let mut c = RunConfig::new(500, s);
            c.seed = 9100 + seed;
            insertion_p(&shells, &c)
        })
        .collect();
    let med = median(&crippled);
    outcome(
        meta > 1e-3 && med < 0.01,
        format!("rejection meta-KS p = {meta:.3}; crippled slice median p = {med:.2e}"),
    )
}

fn criterion_10() -> Outcome {
    let problem = truncated_gaussian(5.0, 2).unwrap();
    let trace = run(&problem, &toy_config(500, 5, 10)).unwrap();
    let v = assign_volumes(&trace, &VolumeMethod::MeanLog).unwrap();
    let p = posterior_weights(&trace, &v).unwrap();
    let log_z = log_evidence(&trace, &v).unwrap().ln();
    let c: f64 = 7.5;
    let scaled = reweight(
        &trace,
        &v,
        |t| -t.iter().map(|x| x * x).sum::<f64>() + c.ln(),
        |_| 0.0,
    )
    .unwrap();
    let shift = scaled.log_z.ln() - log_z;
    let identical = scaled.weights == p;
    let identity = reweight(&trace, &v, |t| -t.iter().map(|x| x * x).sum::<f64>(), |_| 0.0).unwrap();
    let noop = identity.weights == p && identity.log_z.ln() == log_z;
    outcome(
        (shift - c.ln()).abs() <= 1e-10 && identical && noop,
        format!(
            "log Z shift error {:.1e}; weights bit-identical: {identical}; identity no-op: {noop}",
            (shift - c.ln()).abs()
        ),
    )
}

/// log-log slope of `y` against `x` by least squares.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

fn criterion_11() -> Outcome {
    let dims = [2usize, 8, 32];
    // Fixed error target: sqrt(H/nlive) = 0.2 with H from the analytic oracle.
    let target = 0.2f64;
    let mut calls = Vec::new();
    let mut efficiency = Vec::new();
    for &d in &dims {
        let problem = truncated_gaussian(5.0, d).unwrap();
        let h = problem.oracle.kl.unwrap();
        let nlive = (h / (target * target)).ceil() as usize;
        let mut c = RunConfig::new(nlive, SamplerConfig::new(SamplerKind::Slice, d));
        c.seed = 11;
        calls.push(run(&problem, &c).unwrap().likelihood_calls as f64);
        let mut c = RunConfig::new(nlive, SamplerConfig::new(SamplerKind::Ellipsoid, d));
        c.seed = 11;
        let t = run(&problem, &c).unwrap();
        let initial = nlive as f64;
        efficiency.push((t.particles().count() as f64 - initial) / (t.likelihood_calls as f64 - initial));
    }
    let dims_f: Vec<f64> = dims.iter().map(|&d| d as f64).collect();
    let s = slope(&dims_f, &calls);
    let per_d2: Vec<f64> = calls.iter().zip(&dims_f).map(|(c, d)| c / (d * d)).collect();
    let decreasing = efficiency.windows(2).all(|w| w[1] < w[0]);
    let bounded = per_d2.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        bounded && decreasing,
        format!(
            "slice calls {:?} (calls/d^2 {:?}, log-log slope {s:.2}); ellipsoid efficiency {:?}",
            calls.iter().map(|c| *c as u64).collect::<Vec<_>>(),
            per_d2.iter().map(|c| c.round() as u64).collect::<Vec<_>>(),
            efficiency.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let reports = toy_reports(50);
    let criteria: Vec<(usize, Box<dyn Fn() -> Outcome>)> = vec![
        (1, Box::new(|| criterion_1(&reports))),
        (2, Box::new(|| criterion_2(&reports))),
        (3, Box::new(criterion_3)),
        (4, Box::new(criterion_4)),
        (5, Box::new(criterion_5)),
        (6, Box::new(criterion_6)),
        (7, Box::new(criterion_7)),
        (8, Box::new(criterion_8)),
        (9, Box::new(criterion_9)),
        (10, Box::new(criterion_10)),
        (11, Box::new(criterion_11)),
    ];
    let mut failed = 0;
    for (k, f) in &criteria {
        let t = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {k:>2}: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!(
        "acceptance: {}/{} passed in {:.0}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
