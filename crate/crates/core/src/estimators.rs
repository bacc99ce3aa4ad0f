//! Volumes, evidence, posterior weights and error bars computed from a
//! finished trace.
//!
//! Dead points that share a likelihood form a plateau group: `q` points
//! removed from `N` live points compress the volume by a Beta(N + 1 - q, q)
//! factor, and volumes inside the group are interpolated linearly.
//!
//! Quadrature weights follow the trapezium rule with these end conventions:
//! the first dead point receives the whole interval `[X_1, X_0 = 1]`
//! plus half of `[X_2, X_1]`; interior intervals are split evenly; the tail
//! `[0, X_N]` goes to the last dead point when the live points were killed,
//! or is shared equally among the final live points otherwise. The weights
//! therefore sum to exactly one, and a constant likelihood integrates to
//! itself.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::logvalue::{log_sub_f64, log_sum_f64, LogValue};
use crate::rng::RngStream;
use crate::stats;
use crate::trace::{Particle, RunTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeMethod {
    /// ⟨log t⟩: −1/n per single death, exact harmonic sums for plateaus.
    MeanLog,
    /// ⟨t⟩ = n/(n + 1); single deaths only.
    Mean,
    /// t = 1 − 1/n; single deaths only.
    Walter,
    /// One draw of every compression factor from its Beta law.
    Simulated { seed: u64, stream: u64 },
}

/// How tied dead points are compressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauTreatment {
    /// One Beta(N + 1 − q, q) compression per group.
    Grouped,
    /// Every tied point as a single death from the group's N live points:
    /// the estimate an implementation ignorant of plateaus would make.
    SingleDeath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeAssignment {
    /// log X_i for each dead point, in trace order.
    pub log_x: Vec<f64>,
    pub method: VolumeMethod,
}

impl VolumeAssignment {
    /// log X after the last death; 0 when there are no dead points.
    pub fn terminal(&self) -> f64 {
        self.log_x.last().copied().unwrap_or(0.0)
    }
}

/// Maximal runs of consecutive dead points with equal likelihood, as
/// `(start, len)`.
pub fn plateau_groups(trace: &RunTrace) -> Vec<(usize, usize)> {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < trace.dead.len() {
        let l = trace.dead[i].particle.log_like;
        let mut j = i + 1;
        while j < trace.dead.len() && trace.dead[j].particle.log_like == l {
            j += 1;
        }
        groups.push((i, j - i));
        i = j;
    }
    groups
}

pub fn assign_volumes(trace: &RunTrace, method: &VolumeMethod) -> Result<VolumeAssignment> {
    assign_volumes_with(trace, method, PlateauTreatment::Grouped)
}

fn harmonic(from: usize, to: usize) -> f64 {
    (from..=to).map(|j| 1.0 / j as f64).sum()
}

/// One draw of log t, the compression when `q` tied points are removed
/// from `n` live points: t ~ Beta(n + 1 − q, q).
pub fn draw_log_compression(n: usize, q: usize, rng: &mut impl Rng) -> f64 {
    assert!(q >= 1 && q <= n, "need 1 <= q <= n, got q={q}, n={n}");
    let a = (n + 1 - q) as f64;
    if q == 1 {
        // Largest of n uniforms: U^(1/n).
        let u: f64 = 1.0 - rng.random::<f64>();
        return u.ln() / a;
    }
    let ga: f64 = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
    let gb: f64 = Gamma::new(q as f64, 1.0).expect("positive shape").sample(rng);
    ga.ln() - (ga + gb).ln()
}

pub fn assign_volumes_with(
    trace: &RunTrace,
    method: &VolumeMethod,
    plateaus: PlateauTreatment,
) -> Result<VolumeAssignment> {
    let mut rng = match method {
        VolumeMethod::Simulated { seed, stream } => Some(RngStream::new(*seed, *stream).rng()),
        _ => None,
    };
    let mut log_x = Vec::with_capacity(trace.dead.len());
    let mut current = 0.0f64;
    for (start, q) in plateau_groups(trace) {
        let n = trace.dead[start].n_active;
        if n == 0 || q > n {
            return Err(Error::InvalidTrace(format!(
                "dead point {start} has {q} tied deaths but n_active = {n}"
            )));
        }
        if q == 1 || plateaus == PlateauTreatment::SingleDeath {
            for _ in 0..q {
                let nf = n as f64;
                let log_t = match method {
                    VolumeMethod::MeanLog => -1.0 / nf,
                    VolumeMethod::Mean => (nf / (nf + 1.0)).ln(),
                    VolumeMethod::Walter => (1.0 - 1.0 / nf).ln(),
                    VolumeMethod::Simulated { .. } => {
                        draw_log_compression(n, 1, rng.as_mut().expect("seeded"))
                    }
                };
                current += log_t;
                log_x.push(current);
            }
            continue;
        }
        let log_t = match method {
            VolumeMethod::MeanLog => -harmonic(n + 1 - q, n),
            VolumeMethod::Simulated { .. } => draw_log_compression(n, q, rng.as_mut().expect("seeded")),
            VolumeMethod::Mean | VolumeMethod::Walter => {
                return Err(Error::Unsupported(format!(
                    "{method:?} volumes are defined for single deaths only; \
                     dead point {start} starts a plateau of {q}"
                )))
            }
        };
        // Linear interpolation in X across the group.
        let a = -log_t.exp_m1();
        for j in 1..q {
            log_x.push(current + (-(j as f64 / q as f64) * a).ln_1p());
        }
        current += log_t;
        log_x.push(current);
    }
    Ok(VolumeAssignment {
        log_x,
        method: *method,
    })
}

/// log of each particle's volume weight, dead points first, then final
/// live points.
pub fn log_volume_weights(trace: &RunTrace, volumes: &VolumeAssignment) -> Result<Vec<f64>> {
    let n = trace.dead.len();
    if volumes.log_x.len() != n {
        return Err(Error::InputDomain(format!(
            "{} volumes for {} dead points",
            volumes.log_x.len(),
            n
        )));
    }
    let x = |i: usize| if i == 0 { 0.0 } else { volumes.log_x[i - 1] };
    // log of the interval [X_i, X_{i-1}] for i = 1..=n.
    let interval = |i: usize| log_sub_f64(x(i - 1), x(i)).max(f64::NEG_INFINITY);
    let half = 0.5f64.ln();
    let mut w = Vec::with_capacity(n + trace.final_live.len());
    for i in 1..=n {
        let below = if i < n {
            interval(i + 1) + half
        } else {
            f64::NEG_INFINITY
        };
        let above = if i == 1 { interval(1) } else { interval(i) + half };
        w.push(log_sum_f64([above, below]));
    }
    let tail = x(n);
    if trace.final_live.is_empty() {
        if n > 0 {
            w[n - 1] = log_sum_f64([w[n - 1], tail]);
        }
    } else {
        let share = tail - (trace.final_live.len() as f64).ln();
        w.extend(std::iter::repeat_n(share, trace.final_live.len()));
    }
    Ok(w)
}

/// log(w_i · L_i^β) for every particle, dead points first.
fn log_terms(trace: &RunTrace, volumes: &VolumeAssignment, beta: f64) -> Result<Vec<f64>> {
    let w = log_volume_weights(trace, volumes)?;
    Ok(trace
        .particles()
        .zip(w)
        .map(|(p, lw)| (LogValue::from_ln(lw) * p.log_like.powf(beta)).ln())
        .collect())
}

pub fn log_evidence(trace: &RunTrace, volumes: &VolumeAssignment) -> Result<LogValue> {
    Ok(LogValue::from_ln(log_sum_f64(log_terms(trace, volumes, 1.0)?)))
}

/// Normalized posterior weights p_i = w_i·L_i / Z, dead points first.
pub fn posterior_weights(trace: &RunTrace, volumes: &VolumeAssignment) -> Result<Vec<f64>> {
    let terms = log_terms(trace, volumes, 1.0)?;
    normalize(&terms)
}

fn normalize(terms: &[f64]) -> Result<Vec<f64>> {
    let log_z = log_sum_f64(terms.iter().copied());
    if log_z == f64::NEG_INFINITY || !log_z.is_finite() {
        return Err(Error::UndefinedPosterior("every posterior weight is zero".into()));
    }
    Ok(terms.iter().map(|t| (t - log_z).exp()).collect())
}

/// Prior-to-posterior KL divergence in nats, from the same volumes as Z.
pub fn kl_divergence(trace: &RunTrace, volumes: &VolumeAssignment) -> Result<f64> {
    let log_z = log_evidence(trace, volumes)?.ln();
    let p = posterior_weights(trace, volumes)?;
    Ok(trace
        .particles()
        .zip(p)
        .filter(|(_, p)| *p > 0.0)
        .map(|(x, p)| p * (x.log_like.ln() - log_z))
        .sum())
}

/// √(H/nlive). A quick estimate; [`simulate_evidence`] is authoritative.
pub fn evidence_error(h: f64, nlive: usize) -> f64 {
    (h.max(0.0) / nlive.max(1) as f64).sqrt()
}

/// log Z under `nsamples` independent simulated volume assignments.
pub fn simulate_evidence(trace: &RunTrace, nsamples: usize, seed: u64) -> Result<Vec<f64>> {
    if nsamples < 2 {
        return Err(Error::InputDomain(format!(
            "nsamples must be at least 2, got {nsamples}"
        )));
    }
    (0..nsamples as u64)
        .into_par_iter()
        .map(|k| {
            let v = assign_volumes(trace, &VolumeMethod::Simulated { seed, stream: k })?;
            Ok(log_evidence(trace, &v)?.ln())
        })
        .collect()
}

/// 1 / Σ p_i² for normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s2: f64 = weights.iter().map(|p| p * p).sum();
    let s: f64 = weights.iter().sum();
    s * s / s2
}

/// Σ p_i f(θ_i) over dead and final live points.
pub fn posterior_expectation(
    trace: &RunTrace,
    volumes: &VolumeAssignment,
    f: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    let p = posterior_weights(trace, volumes)?;
    Ok(trace
        .particles()
        .zip(p)
        .filter(|(_, p)| *p > 0.0)
        .map(|(x, p)| p * f(&x.theta))
        .sum())
}

/// Splits a static run into single-live-point threads by birth lineage.
/// Each thread lists its particles from prior draw to final death; the flag
/// marks particles that were final live points.
pub fn threads(trace: &RunTrace) -> Result<Vec<Vec<(Particle, bool)>>> {
    let mut all: Vec<(Particle, bool)> = trace
        .dead
        .iter()
        .map(|d| (d.particle.clone(), false))
        .chain(trace.final_live.iter().map(|p| (p.clone(), true)))
        .collect();
    all.sort_by(|a, b| a.0.death_order(&b.0));
    // Children grouped by birth contour, lowest id first.
    let mut children: Vec<usize> = (0..all.len())
        .filter(|&i| !all[i].0.birth_log_like.is_zero())
        .collect();
    children.sort_by(|&a, &b| {
        all[a]
            .0
            .birth_log_like
            .total_cmp(&all[b].0.birth_log_like)
            .then(all[a].0.id.cmp(&all[b].0.id))
    });
    let mut next_of = vec![None; all.len()];
    let mut c = 0;
    let mut i = 0;
    while i < all.len() {
        let l = all[i].0.log_like;
        let mut j = i;
        while j < all.len() && all[j].0.log_like == l {
            j += 1;
        }
        while c < children.len() && all[children[c]].0.birth_log_like < l {
            c += 1;
        }
        let mut k = 0;
        while c < children.len() && all[children[c]].0.birth_log_like == l {
            if i + k >= j {
                return Err(Error::Unsupported(
                    "more particles are born than die at a contour; threads are only defined \
                     for runs with a constant number of live points"
                        .into(),
                ));
            }
            next_of[i + k] = Some(children[c]);
            k += 1;
            c += 1;
        }
        i = j;
    }
    let mut out = Vec::new();
    for root in (0..all.len()).filter(|&i| all[i].0.birth_log_like.is_zero()) {
        let mut thread = Vec::new();
        let mut at = Some(root);
        while let Some(k) = at {
            thread.push(all[k].clone());
            at = next_of[k];
        }
        out.push(thread);
    }
    let covered: usize = out.iter().map(|t| t.len()).sum();
    if covered != all.len() {
        return Err(Error::Unsupported(
            "trace contains particles outside any thread".into(),
        ));
    }
    Ok(out)
}

/// Rebuilds a run from threads, renumbering particles.
pub fn combine_threads(threads: &[&Vec<(Particle, bool)>]) -> RunTrace {
    let mut dead = Vec::new();
    let mut finals = Vec::new();
    let mut id = 0u64;
    for thread in threads {
        for (p, is_final) in thread.iter() {
            let mut p = p.clone();
            p.id = id;
            id += 1;
            if *is_final {
                finals.push(p);
            } else {
                dead.push(p);
            }
        }
    }
    RunTrace::from_particles(dead, finals)
}

/// Standard deviation of ⟨f⟩ over runs rebuilt from threads resampled with
/// replacement.
pub fn bootstrap_posterior_error(
    trace: &RunTrace,
    f: impl Fn(&[f64]) -> f64 + Sync,
    nresamples: usize,
    seed: u64,
) -> Result<f64> {
    if nresamples < 10 {
        return Err(Error::InputDomain(format!(
            "nresamples must be at least 10, got {nresamples}"
        )));
    }
    let th = threads(trace)?;
    let m = th.len();
    let estimates: Vec<f64> = (0..nresamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(seed, r).rng();
            let pick: Vec<&Vec<(Particle, bool)>> = (0..m).map(|_| &th[rng.random_range(0..m)]).collect();
            let t = combine_threads(&pick);
            let v = assign_volumes(&t, &VolumeMethod::MeanLog)?;
            posterior_expectation(&t, &v, &f)
        })
        .collect::<Result<_>>()?;
    Ok(stats::std_dev(&estimates))
}

/// log Z(β) = log Σ w_i L_i^β from a single run.
pub fn thermo_evidence(trace: &RunTrace, volumes: &VolumeAssignment, beta: f64) -> Result<LogValue> {
    if !(beta >= 0.0) {
        return Err(Error::InputDomain(format!("β must be non-negative, got {beta}")));
    }
    Ok(LogValue::from_ln(log_sum_f64(log_terms(trace, volumes, beta)?)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoPoint {
    pub beta: f64,
    pub log_z: f64,
    pub mean_energy: f64,
    pub heat_capacity: f64,
}

/// ⟨E⟩(β) with E = −log L, and C_V = ∂⟨E⟩/∂T (T = 1/β) by finite
/// differences: centered inside the grid, one-sided at its ends.
pub fn mean_energy_and_heat_capacity(
    trace: &RunTrace,
    volumes: &VolumeAssignment,
    beta_grid: &[f64],
) -> Result<Vec<ThermoPoint>> {
    if beta_grid.len() < 3 {
        return Err(Error::InputDomain(
            "heat capacity needs a β grid of at least 3 points".into(),
        ));
    }
    if beta_grid.iter().any(|b| !(*b > 0.0)) || beta_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InputDomain(
            "β grid must be positive and increasing".into(),
        ));
    }
    let energies: Vec<f64> = trace.particles().map(|p| -p.log_like.ln()).collect();
    let mut points = Vec::with_capacity(beta_grid.len());
    for &beta in beta_grid {
        let terms = log_terms(trace, volumes, beta)?;
        let log_z = log_sum_f64(terms.iter().copied());
        let mean_energy = energies
            .iter()
            .zip(&terms)
            .filter(|(e, t)| e.is_finite() && **t > f64::NEG_INFINITY)
            .map(|(e, t)| e * (t - log_z).exp())
            .sum();
        points.push(ThermoPoint {
            beta,
            log_z,
            mean_energy,
            heat_capacity: 0.0,
        });
    }
    let k = points.len();
    for i in 0..k {
        let (a, b) = if i == 0 {
            (0, 1)
        } else if i == k - 1 {
            (k - 2, k - 1)
        } else {
            (i - 1, i + 1)
        };
        let dt = 1.0 / points[b].beta - 1.0 / points[a].beta;
        points[i].heat_capacity = (points[b].mean_energy - points[a].mean_energy) / dt;
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reweighted {
    pub weights: Vec<f64>,
    pub log_z: LogValue,
    pub ess: f64,
}

/// Relative spread below which log-ratios count as one constant.
const CONSTANT_RATIO_TOL: f64 = 1e-12;

/// Reweights normalized posterior weights by exp(Δ_i). Returns the new
/// weights and log Σ p_i exp(Δ_i). A constant Δ leaves the weights
/// untouched. Points with zero weight are ignored.
pub fn reweight_weights(weights: &[f64], log_ratio: &[f64]) -> Result<(Vec<f64>, f64)> {
    if weights.len() != log_ratio.len() {
        return Err(Error::InputDomain("weights and ratios differ in length".into()));
    }
    let support: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let finite: Vec<f64> = support
        .iter()
        .map(|&i| log_ratio[i])
        .filter(|d| *d > f64::NEG_INFINITY)
        .collect();
    if finite.is_empty() {
        return Err(Error::UndefinedPosterior(
            "the new density vanishes at every weighted point".into(),
        ));
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if finite.len() == support.len() && hi - lo <= CONSTANT_RATIO_TOL * hi.abs().max(1.0) {
        let shift = support.iter().map(|&i| weights[i] * log_ratio[i]).sum::<f64>();
        return Ok((weights.to_vec(), shift));
    }
    let terms: Vec<f64> = weights
        .iter()
        .zip(log_ratio)
        .map(|(p, d)| if *p > 0.0 { p.ln() + d } else { f64::NEG_INFINITY })
        .collect();
    let shift = log_sum_f64(terms.iter().copied());
    let new = terms.iter().map(|t| (t - shift).exp()).collect();
    Ok((new, shift))
}

/// Posterior weights and evidence for a new likelihood and prior without a
/// new run: Δ_i = log L′_i + log(π′/π)_i − log L_i.
pub fn reweight(
    trace: &RunTrace,
    volumes: &VolumeAssignment,
    new_log_like: impl Fn(&[f64]) -> f64,
    new_log_prior_ratio: impl Fn(&[f64]) -> f64,
) -> Result<Reweighted> {
    let p = posterior_weights(trace, volumes)?;
    let log_z = log_evidence(trace, volumes)?;
    let delta: Vec<f64> = trace
        .particles()
        .zip(&p)
        .map(|(x, p)| {
            if *p > 0.0 {
                new_log_like(&x.theta) + new_log_prior_ratio(&x.theta) - x.log_like.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let (weights, shift) = reweight_weights(&p, &delta)?;
    let ess = effective_sample_size(&weights);
    Ok(Reweighted {
        weights,
        log_z: LogValue::from_ln(log_z.ln() + shift),
        ess,
    })
}

/// The reported triplet plus effective sample size and cost.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceReport {
    pub log_z: LogValue,
    /// Standard deviation of simulated log Z draws.
    pub sigma_log_z: f64,
    pub h: f64,
    pub ess: f64,
    pub n_like_calls: u64,
    pub problem_fingerprint: String,
}

pub fn evidence_report(
    trace: &RunTrace,
    method: &VolumeMethod,
    nsim: usize,
    sim_seed: u64,
) -> Result<EvidenceReport> {
    if trace.dead.is_empty() && trace.final_live.is_empty() {
        return Err(Error::InputDomain("empty trace".into()));
    }
    let v = assign_volumes(trace, method)?;
    let log_z = log_evidence(trace, &v)?;
    let h = kl_divergence(trace, &v)?;
    let ess = effective_sample_size(&posterior_weights(trace, &v)?);
    let sims = simulate_evidence(trace, nsim, sim_seed)?;
    Ok(EvidenceReport {
        log_z,
        sigma_log_z: stats::std_dev(&sims),
        h,
        ess,
        n_like_calls: trace.likelihood_calls,
        problem_fingerprint: trace.problem_fingerprint.clone(),
    })
}

/// Birth and end contours of the region a dynamic batch should cover:
/// dead points whose importance
/// `G·p_i/max p + (1 − G)·(remaining evidence)_i/max` is within the window
/// fraction of the peak. The birth contour is the death just before the
/// first such point (`log 0` if it is the first dead point).
pub fn importance_window(
    trace: &RunTrace,
    volumes: &VolumeAssignment,
    posterior_weight: f64,
) -> Result<(LogValue, LogValue)> {
    let n = trace.dead.len();
    if n == 0 {
        return Err(Error::InputDomain("importance needs dead points".into()));
    }
    let terms = log_terms(trace, volumes, 1.0)?;
    let p = normalize(&terms)?;
    let mut remaining = vec![0.0; n];
    let mut acc = p[n..].iter().sum::<f64>();
    for i in (0..n).rev() {
        acc += p[i];
        remaining[i] = acc;
    }
    let pmax = p[..n].iter().copied().fold(0.0, f64::max);
    let rmax = remaining.iter().copied().fold(0.0, f64::max);
    let g = posterior_weight;
    let importance: Vec<f64> = (0..n)
        .map(|i| {
            let post = if pmax > 0.0 { p[i] / pmax } else { 0.0 };
            let rem = if rmax > 0.0 { remaining[i] / rmax } else { 0.0 };
            g * post + (1.0 - g) * rem
        })
        .collect();
    let imax = importance.iter().copied().fold(0.0, f64::max);
    let cut = (1.0 - crate::engine::IMPORTANCE_WINDOW) * imax;
    let lo = importance.iter().position(|&i| i >= cut).unwrap_or(0);
    let hi = importance.iter().rposition(|&i| i >= cut).unwrap_or(n - 1);
    let birth = if lo == 0 {
        LogValue::ZERO
    } else {
        trace.dead[lo - 1].particle.log_like
    };
    Ok((birth, trace.dead[hi].particle.log_like))
}

/// Standard deviation of log X_i under the single-death Beta laws of the
/// dead points up to and including `i`: √(Σ 1/n_j²).
pub fn log_volume_std(trace: &RunTrace) -> Vec<f64> {
    let mut acc = 0.0;
    trace
        .dead
        .iter()
        .map(|d| {
            acc += 1.0 / (d.n_active as f64).powi(2);
            acc.sqrt()
        })
        .collect()
}
