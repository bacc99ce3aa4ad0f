use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nestkit::diagnostics::{insertion_test, volume_check, Verdict};
use nestkit::engine::run as run_engine;
use nestkit::estimators::{
    assign_volumes, evidence_report, mean_energy_and_heat_capacity, posterior_weights, VolumeMethod,
};
use nestkit::problems::Problem;
use nestkit::RunTrace;

use crate::config::{self, Manifest, Overrides, RunRecord};
use crate::deadpoints;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SUMMARY_FILE: &str = "summary.txt";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const DEFAULT_SIMULATIONS: usize = 1000;
pub const DEFAULT_SIM_SEED: u64 = 0;

/// Values of the summary file, in its fixed key order.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub log_z: f64,
    pub sigma_log_z: f64,
    pub h_nats: f64,
    pub ess: f64,
    pub n_like_calls: Option<u64>,
    pub insertion_p: Option<f64>,
    pub seed: Option<u64>,
    pub version: String,
}

impl Summary {
    pub fn render(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "unknown".into());
        format!(
            "log_z={:.16e}\nsigma_log_z={:.16e}\nh_nats={:.16e}\ness={:.16e}\nn_like_calls={}\ninsertion_p={}\nseed={}\nversion={}\n",
            self.log_z,
            self.sigma_log_z,
            self.h_nats,
            self.ess,
            opt(self.n_like_calls.map(|n| n.to_string())),
            opt(self.insertion_p.map(|p| format!("{p:.16e}"))),
            opt(self.seed.map(|s| s.to_string())),
            self.version,
        )
    }
}

pub fn summarize(
    trace: &RunTrace,
    nsim: usize,
    sim_seed: u64,
    manifest: Option<&Manifest>,
) -> Result<Summary, CliError> {
    let report = evidence_report(trace, &VolumeMethod::MeanLog, nsim, sim_seed)?;
    let insertion = insertion_test(trace)?;
    Ok(Summary {
        log_z: report.log_z.ln(),
        sigma_log_z: report.sigma_log_z,
        h_nats: report.h,
        ess: report.ess,
        n_like_calls: manifest.map(|m| m.run.n_like_calls),
        insertion_p: insertion.insertion_p_value_global,
        seed: manifest.and_then(|m| m.config.seed),
        version: manifest.map_or_else(|| VERSION.to_string(), |m| m.run.version.clone()),
    })
}

/// Insertion test plus, where the problem has an analytic X(λ), the volume
/// check. Returns the overall verdict and the report text.
fn diagnose(
    trace: &RunTrace,
    problem: &Problem,
    log_z: f64,
    sigma: f64,
) -> Result<(Verdict, String), CliError> {
    let insertion = insertion_test(trace)?;
    let mut verdict = insertion.verdict;
    let mut out = String::new();
    let p = |v: Option<f64>| v.map_or("none".into(), |p| format!("{p:.6e}"));
    writeln!(
        out,
        "insertion_p_global={}",
        p(insertion.insertion_p_value_global)
    )
    .unwrap();
    writeln!(
        out,
        "insertion_p_rolling={}",
        p(insertion.insertion_p_value_rolling)
    )
    .unwrap();
    writeln!(
        out,
        "rolling_blocks={}",
        insertion.insertion_p_values_rolling.len()
    )
    .unwrap();
    writeln!(out, "insertion_verdict={}", insertion.verdict.name()).unwrap();
    let mut warnings = insertion.warnings;
    if problem.oracle.volume.is_some() {
        let vols = assign_volumes(trace, &VolumeMethod::MeanLog)?;
        let check = volume_check(trace, &vols, problem)?;
        verdict = verdict.max(check.verdict);
        writeln!(out, "volume_fraction_inside={}", p(check.volume_fraction_inside)).unwrap();
        writeln!(out, "volume_verdict={}", check.verdict.name()).unwrap();
        warnings.extend(check.warnings);
    }
    if let Some(reference) = problem.oracle.log_z {
        writeln!(out, "reference_log_z={reference:.16e}").unwrap();
        writeln!(out, "log_z_offset_sigma={:.3}", (log_z - reference) / sigma).unwrap();
    }
    if trace.truncated {
        warnings.push("run truncated before the stopping rule was met".into());
    }
    warnings.extend(trace.warnings.iter().cloned());
    for w in &warnings {
        writeln!(out, "warning={w}").unwrap();
    }
    if verdict == Verdict::Pass && !warnings.is_empty() {
        verdict = Verdict::Warn;
    }
    let mut text = format!("verdict={}\n", verdict.name());
    text.push_str(&out);
    Ok((verdict, text))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(CliError::io(path))
}

pub fn run(config_path: &Path, overrides: &Overrides) -> Result<Verdict, CliError> {
    let file = config::load(config_path)?;
    let resolved = config::resolve(file, overrides)?;
    let dir = &resolved.output_dir;
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let started = config::unix_now();
    let trace = run_engine(&resolved.problem, &resolved.config)?;
    let finished = config::unix_now();
    let manifest = Manifest {
        run: RunRecord {
            version: VERSION.into(),
            started_unix: started,
            finished_unix: finished,
            n_like_calls: trace.likelihood_calls,
            truncated: trace.truncated,
            problem_fingerprint: trace.problem_fingerprint.clone(),
            config_fingerprint: trace.config_fingerprint.clone(),
        },
        config: resolved.file.clone(),
    };
    deadpoints::write(&trace, &dir.join(deadpoints::FILE_NAME))?;
    let summary = summarize(&trace, DEFAULT_SIMULATIONS, DEFAULT_SIM_SEED, Some(&manifest))?;
    write_file(&dir.join(SUMMARY_FILE), &summary.render())?;
    let (verdict, report) = diagnose(&trace, &resolved.problem, summary.log_z, summary.sigma_log_z)?;
    write_file(&dir.join(DIAGNOSTICS_FILE), &report)?;
    let manifest_text = toml::to_string(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&dir.join(MANIFEST_FILE), &manifest_text)?;
    print!("{}", summary.render());
    println!("verdict={}", verdict.name());
    Ok(verdict)
}

fn read_manifest(run_dir: &Path) -> Result<Option<Manifest>, CliError> {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let m = toml::from_str(&text).map_err(|e| CliError::Corrupt {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    Ok(Some(m))
}

pub fn summary(run_dir: &Path, nsim: usize, sim_seed: u64) -> Result<(), CliError> {
    let trace = deadpoints::read(&run_dir.join(deadpoints::FILE_NAME))?;
    let manifest = read_manifest(run_dir)?;
    print!(
        "{}",
        summarize(&trace, nsim, sim_seed, manifest.as_ref())?.render()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlotKind {
    Posterior1d { bins: usize },
    LogLVsLogX,
    Thermo { beta_min: f64, beta_max: f64, n: usize },
}

impl PlotKind {
    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::Posterior1d { .. } => "posterior_1d.csv",
            PlotKind::LogLVsLogX => "logl_vs_logx.csv",
            PlotKind::Thermo { .. } => "thermo.csv",
        }
    }
}

/// Weighted histogram per parameter over the sampled range:
/// `parameter,bin_low,bin_high,weight`, weights summing to 1 per parameter.
pub fn posterior_1d(trace: &RunTrace, bins: usize) -> Result<String, CliError> {
    if bins == 0 {
        return Err(CliError::Config("bins must be positive".into()));
    }
    let vols = assign_volumes(trace, &VolumeMethod::MeanLog)?;
    let w = posterior_weights(trace, &vols)?;
    let d = trace.particles().next().map_or(0, |p| p.theta.len());
    let mut out = String::from("parameter,bin_low,bin_high,weight\n");
    for k in 0..d {
        let (lo, hi) = trace
            .particles()
            .map(|p| p.theta[k])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
                (a.min(x), b.max(x))
            });
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut hist = vec![0.0; bins];
        for (p, wi) in trace.particles().zip(&w) {
            let b = (((p.theta[k] - lo) / width) as usize).min(bins - 1);
            hist[b] += wi;
        }
        for (b, h) in hist.iter().enumerate() {
            let a = lo + b as f64 * width;
            writeln!(out, "theta_{k},{a:.16e},{:.16e},{h:.16e}", a + width).unwrap();
        }
    }
    Ok(out)
}

/// `log_x,log_like,weight` for every dead point; final live points share
/// the terminal volume and are left out.
pub fn logl_vs_logx(trace: &RunTrace) -> Result<String, CliError> {
    let vols = assign_volumes(trace, &VolumeMethod::MeanLog)?;
    let w = posterior_weights(trace, &vols)?;
    let mut out = String::from("log_x,log_like,weight\n");
    for ((d, x), p) in trace.dead.iter().zip(&vols.log_x).zip(&w) {
        writeln!(out, "{x:.16e},{:.16e},{p:.16e}", d.particle.log_like.ln()).unwrap();
    }
    Ok(out)
}

/// `beta,log_z,mean_energy,heat_capacity` on an evenly spaced β grid.
pub fn thermo(trace: &RunTrace, beta_min: f64, beta_max: f64, n: usize) -> Result<String, CliError> {
    if n < 3 || !(beta_min > 0.0) || !(beta_max > beta_min) {
        return Err(CliError::Config(format!(
            "thermo needs 0 < beta_min < beta_max and n >= 3, got {beta_min}, {beta_max}, {n}"
        )));
    }
    let grid: Vec<f64> = (0..n)
        .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (n - 1) as f64)
        .collect();
    let vols = assign_volumes(trace, &VolumeMethod::MeanLog)?;
    let points = mean_energy_and_heat_capacity(trace, &vols, &grid)?;
    let mut out = String::from("beta,log_z,mean_energy,heat_capacity\n");
    for p in points {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            p.beta, p.log_z, p.mean_energy, p.heat_capacity
        )
        .unwrap();
    }
    Ok(out)
}

pub fn plotdata(run_dir: &Path, kind: PlotKind, output: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let trace = deadpoints::read(&run_dir.join(deadpoints::FILE_NAME))?;
    let text = match kind {
        PlotKind::Posterior1d { bins } => posterior_1d(&trace, bins)?,
        PlotKind::LogLVsLogX => logl_vs_logx(&trace)?,
        PlotKind::Thermo {
            beta_min,
            beta_max,
            n,
        } => thermo(&trace, beta_min, beta_max, n)?,
    };
    let dir = output.unwrap_or_else(|| run_dir.to_path_buf());
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let path = dir.join(kind.file_name());
    write_file(&path, &text)?;
    Ok(path)
}
