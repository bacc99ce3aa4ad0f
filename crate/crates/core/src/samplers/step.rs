//! Random-walk and slice samplers.
//!
//! Both start from a surviving live point picked uniformly at random. The
//! point that was just removed is never used as a start.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{evaluate, new_particle, SamplerConfig, SamplerStats};
use crate::error::{Error, Result};
use crate::logvalue::LogValue;
use crate::problems::Problem;
use crate::rng::RngStream;
use crate::trace::Particle;

/// Folds `x` back into [0, 1] by mirroring at the faces.
pub fn reflect(x: f64) -> f64 {
    let y = x.rem_euclid(2.0);
    if y > 1.0 {
        2.0 - y
    } else {
        y
    }
}

/// Eigenvectors of the live-point covariance, each scaled by the width of a
/// uniform distribution with the same variance along it.
pub fn slice_axes(live: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = live[0].len();
    let n = live.len() as f64;
    let mut mean = vec![0.0; d];
    for p in live {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in live {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (p[i] - mean[i]) * (p[j] - mean[j]) / (n - 1.0).max(1.0);
            }
        }
    }
    let eig = cov.symmetric_eigen();
    (0..d)
        .map(|k| {
            let width = (12.0 * eig.eigenvalues[k].max(0.0)).sqrt().max(1e-6);
            eig.eigenvectors.column(k).iter().map(|v| v * width).collect()
        })
        .collect()
}

fn start_point(live: &[Vec<f64>], rng: &mut impl Rng) -> Vec<f64> {
    live[rng.random_range(0..live.len())].clone()
}

pub(super) fn random_walk(
    problem: &Problem,
    live: &[Vec<f64>],
    threshold: LogValue,
    cfg: &SamplerConfig,
    stream: RngStream,
) -> Result<(Particle, SamplerStats)> {
    if live.is_empty() {
        return Err(Error::InputDomain(
            "random walk needs at least one live point".into(),
        ));
    }
    let mut rng = stream.rng();
    let mut stats = SamplerStats::default();
    let mut x = start_point(live, &mut rng);
    let (mut theta, mut l) = evaluate(problem, &x);
    stats.likelihood_calls += 1;
    for _ in 0..cfg.steps {
        let y: Vec<f64> = x
            .iter()
            .map(|xi| {
                let z: f64 = StandardNormal.sample(&mut rng);
                reflect(xi + cfg.step_scale * z)
            })
            .collect();
        let (ty, ly) = evaluate(problem, &y);
        stats.proposals += 1;
        stats.likelihood_calls += 1;
        if ly > threshold {
            stats.accepts += 1;
            x = y;
            theta = ty;
            l = ly;
        }
    }
    if stats.accepts == 0 {
        stats.stale_walks += 1;
    }
    Ok((new_particle(x, theta, l, threshold), stats))
}

/// Steps out or shrinks past this many evaluations signal a contour the
/// slice cannot resolve.
const MAX_SLICE_EVALUATIONS: u64 = 100_000;

pub(super) fn slice(
    problem: &Problem,
    live: &[Vec<f64>],
    axes: &[Vec<f64>],
    threshold: LogValue,
    cfg: &SamplerConfig,
    stream: RngStream,
) -> Result<(Particle, SamplerStats)> {
    if live.is_empty() {
        return Err(Error::InputDomain(
            "slice sampling needs at least one live point".into(),
        ));
    }
    let mut rng = stream.rng();
    let mut stats = SamplerStats::default();
    let mut x = start_point(live, &mut rng);
    let (mut theta, mut l) = evaluate(problem, &x);
    stats.likelihood_calls += 1;
    let numerical = || Error::NumericalContour {
        threshold: threshold.ln(),
    };

    for _ in 0..cfg.steps {
        let v = &axes[rng.random_range(0..axes.len())];
        // Parameter range keeping x + t·v inside the hypercube.
        let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
        for (xi, vi) in x.iter().zip(v) {
            if *vi != 0.0 {
                let a = -xi / vi;
                let b = (1.0 - xi) / vi;
                tmin = tmin.max(a.min(b));
                tmax = tmax.min(a.max(b));
            }
        }
        let at = |t: f64| -> Vec<f64> {
            x.iter()
                .zip(v)
                .map(|(xi, vi)| (xi + t * vi).clamp(0.0, 1.0))
                .collect()
        };
        let r: f64 = rng.random();
        let mut lo = (-r).max(tmin);
        let mut hi = (1.0 - r).min(tmax);
        let mut evaluations = 0u64;
        while lo > tmin {
            stats.likelihood_calls += 1;
            evaluations += 1;
            if !(evaluate(problem, &at(lo)).1 > threshold) {
                break;
            }
            lo = (lo - 1.0).max(tmin);
            if evaluations > MAX_SLICE_EVALUATIONS {
                return Err(numerical());
            }
        }
        while hi < tmax {
            stats.likelihood_calls += 1;
            evaluations += 1;
            if !(evaluate(problem, &at(hi)).1 > threshold) {
                break;
            }
            hi = (hi + 1.0).min(tmax);
            if evaluations > MAX_SLICE_EVALUATIONS {
                return Err(numerical());
            }
        }

        let mut shrinks = 0u64;
        loop {
            let t = lo + rng.random::<f64>() * (hi - lo);
            let y = at(t);
            let (ty, ly) = evaluate(problem, &y);
            stats.likelihood_calls += 1;
            if ly > threshold {
                x = y;
                theta = ty;
                l = ly;
                break;
            }
            if t < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            shrinks += 1;
            if shrinks > MAX_SLICE_EVALUATIONS {
                return Err(numerical());
            }
        }
        stats.proposals += 1;
        stats.accepts += 1;
    }
    Ok((new_particle(x, theta, l, threshold), stats))
}

fn coordinates(live: &[Particle]) -> Vec<Vec<f64>> {
    live.iter().map(|p| p.u.clone()).collect()
}

/// Gaussian random walk of `cfg.steps` proposals with reflection at the
/// hypercube faces; moves are accepted iff they stay above the threshold.
pub fn sample_random_walk(
    problem: &Problem,
    live: &[Particle],
    threshold: LogValue,
    cfg: &SamplerConfig,
    stream: RngStream,
) -> Result<(Particle, SamplerStats)> {
    random_walk(problem, &coordinates(live), threshold, cfg, stream)
}

/// `cfg.steps` slice moves along randomly chosen principal axes of `live`.
pub fn sample_slice(
    problem: &Problem,
    live: &[Particle],
    threshold: LogValue,
    cfg: &SamplerConfig,
    stream: RngStream,
) -> Result<(Particle, SamplerStats)> {
    let u = coordinates(live);
    let axes = slice_axes(&u);
    slice(problem, &u, &axes, threshold, cfg, stream)
}
