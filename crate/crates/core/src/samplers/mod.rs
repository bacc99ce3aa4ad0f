//! Draws from the constrained prior `π(θ)·1[L(θ) > λ]`.
//!
//! Region samplers (rejection, ellipsoid, multi-ellipsoid) propose
//! independent candidates; candidate `k` of a draw always comes from slot `k`
//! of the draw's stream, so the accepted point does not depend on how many
//! candidates are evaluated concurrently. Step samplers (random walk, slice)
//! run a short chain from a random surviving live point.

mod ellipsoid;
mod step;

pub use ellipsoid::{
    cluster_bic, clustering_bic, fit_ellipsoid, kmeans, unit_ball_log_volume, Ellipsoid, KMEANS_RESTARTS,
};
pub use step::{reflect, sample_random_walk, sample_slice, slice_axes};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::logvalue::LogValue;
use crate::problems::Problem;
use crate::rng::{RngStream, StreamRng};
use crate::trace::Particle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Rejection,
    Ellipsoid,
    MultiEllipsoid,
    RandomWalk,
    Slice,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Rejection => "rejection",
            SamplerKind::Ellipsoid => "ellipsoid",
            SamplerKind::MultiEllipsoid => "multi_ellipsoid",
            SamplerKind::RandomWalk => "random_walk",
            SamplerKind::Slice => "slice",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "rejection" => SamplerKind::Rejection,
            "ellipsoid" => SamplerKind::Ellipsoid,
            "multi_ellipsoid" => SamplerKind::MultiEllipsoid,
            "random_walk" => SamplerKind::RandomWalk,
            "slice" => SamplerKind::Slice,
            _ => return None,
        })
    }

    pub fn is_step_sampler(self) -> bool {
        matches!(self, SamplerKind::RandomWalk | SamplerKind::Slice)
    }
}

/// When the random-walk step scale is adapted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adaptation {
    Continuous,
    /// Adapt for this many iterations, then hold the scale fixed.
    FreezeAfter(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Volume inflation of fitted ellipsoids.
    pub enlargement: f64,
    pub steps: usize,
    pub target_accept: f64,
    /// Random-walk proposal scale in unit-hypercube coordinates.
    pub step_scale: f64,
    pub max_clusters: usize,
    /// Likelihood calls one draw may spend before giving up.
    pub max_calls: u64,
    pub adaptation: Adaptation,
}

pub const DEFAULT_ENLARGEMENT: f64 = 1.1;
pub const DEFAULT_MAX_CALLS: u64 = 10_000_000;
pub const TUNE_DAMPING: f64 = 10.0;

/// Steps per replacement for step samplers: 5·d.
pub fn default_steps(d: usize) -> usize {
    5 * d.max(1)
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, d: usize) -> Self {
        SamplerConfig {
            kind,
            enlargement: DEFAULT_ENLARGEMENT,
            steps: default_steps(d),
            target_accept: 0.5,
            step_scale: 0.1,
            max_clusters: 8,
            max_calls: DEFAULT_MAX_CALLS,
            adaptation: Adaptation::Continuous,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.enlargement >= 1.0) {
            return bad(format!("enlargement must be >= 1, got {}", self.enlargement));
        }
        if self.kind.is_step_sampler() && self.steps == 0 {
            return bad("step samplers need steps >= 1".into());
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            ));
        }
        if !(self.step_scale > 0.0) {
            return bad(format!("step_scale must be positive, got {}", self.step_scale));
        }
        if self.max_clusters == 0 {
            return bad("max_clusters must be >= 1".into());
        }
        if self.max_calls == 0 {
            return bad("max_calls must be >= 1".into());
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        format!(
            "{}(enlargement={},steps={},target_accept={},step_scale={},max_clusters={},max_calls={},adaptation={:?})",
            self.kind.name(),
            self.enlargement,
            self.steps,
            self.target_accept,
            self.step_scale,
            self.max_clusters,
            self.max_calls,
            self.adaptation
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplerStats {
    pub proposals: u64,
    pub accepts: u64,
    pub likelihood_calls: u64,
    /// Ellipsoid fits that needed covariance jitter.
    pub jitter_fits: u64,
    /// Random walks that never moved.
    pub stale_walks: u64,
}

impl SamplerStats {
    pub fn add(&mut self, other: &SamplerStats) {
        self.proposals += other.proposals;
        self.accepts += other.accepts;
        self.likelihood_calls += other.likelihood_calls;
        self.jitter_fits += other.jitter_fits;
        self.stale_walks += other.stale_walks;
    }

    pub fn accept_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }
}

/// Multiplies `current` by `exp((rate - target) / 10)`.
pub fn tune_step_scale(stats: &SamplerStats, current: f64, target: f64) -> f64 {
    if stats.proposals == 0 {
        return current;
    }
    current * ((stats.accept_rate() - target) / TUNE_DAMPING).exp()
}

/// Live-set summaries reused across iterations.
#[derive(Debug, Clone)]
pub enum Geometry {
    None,
    Ellipsoids(Vec<Ellipsoid>),
    /// Principal axes of the live points, scaled to their extent.
    Axes(Vec<Vec<f64>>),
}

/// Fits the geometry `cfg.kind` needs to the unit coordinates of `live`.
pub fn build_geometry(
    cfg: &SamplerConfig,
    live: &[Vec<f64>],
    rng: &mut StreamRng,
) -> Result<(Geometry, SamplerStats)> {
    let mut stats = SamplerStats::default();
    let geometry = match cfg.kind {
        SamplerKind::Rejection | SamplerKind::RandomWalk => Geometry::None,
        SamplerKind::Ellipsoid => {
            let (e, jitter) = fit_ellipsoid(live, cfg.enlargement)?;
            stats.jitter_fits += jitter as u64;
            Geometry::Ellipsoids(vec![e])
        }
        SamplerKind::MultiEllipsoid => {
            let assign = cluster_bic(live, cfg.max_clusters, rng);
            let k = assign.iter().max().map_or(1, |m| m + 1);
            let mut ells = Vec::with_capacity(k);
            for c in 0..k {
                let members: Vec<Vec<f64>> = live
                    .iter()
                    .zip(&assign)
                    .filter(|(_, &a)| a == c)
                    .map(|(p, _)| p.clone())
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let (e, jitter) = fit_ellipsoid(&members, cfg.enlargement)?;
                stats.jitter_fits += jitter as u64;
                ells.push(e);
            }
            Geometry::Ellipsoids(ells)
        }
        SamplerKind::Slice => Geometry::Axes(slice_axes(live)),
    };
    Ok((geometry, stats))
}

pub(crate) fn evaluate(problem: &Problem, u: &[f64]) -> (Vec<f64>, LogValue) {
    match problem.evaluate(u) {
        Ok(v) => v,
        Err(_) => (Vec::new(), LogValue::ZERO),
    }
}

fn new_particle(u: Vec<f64>, theta: Vec<f64>, log_like: LogValue, threshold: LogValue) -> Particle {
    Particle {
        u,
        theta,
        log_like,
        birth_log_like: threshold,
        id: 0,
    }
}

/// Candidate slots per draw; slot `k` holds the k-th candidate.
const MAX_CANDIDATES: u64 = 1 << 24;

/// Evaluates candidates in slot order, `chunk` at a time, and returns the
/// first one above `threshold`. Calls are counted up to the winner only.
/// Unit-cube point, its parameters and its likelihood.
type Draw = (Vec<f64>, Vec<f64>, LogValue);

fn draw_region<F>(
    problem: &Problem,
    threshold: LogValue,
    max_calls: u64,
    stream: RngStream,
    chunk: usize,
    propose: F,
) -> Result<(Particle, SamplerStats)>
where
    F: Fn(&mut StreamRng) -> Option<Vec<f64>> + Sync,
{
    let mut stats = SamplerStats::default();
    let mut next: u64 = 0;
    let chunk = chunk.max(1) as u64;
    let attempt = |k: u64| -> Option<Draw> {
        let mut rng = stream.slot(k);
        let u = propose(&mut rng)?;
        let (theta, l) = evaluate(problem, &u);
        Some((u, theta, l))
    };
    loop {
        let end = (next + chunk).min(MAX_CANDIDATES);
        let results: Vec<Option<Draw>> = if chunk == 1 {
            vec![attempt(next)]
        } else {
            (next..end).into_par_iter().map(attempt).collect()
        };
        for r in results {
            stats.proposals += 1;
            if let Some((u, theta, l)) = r {
                stats.likelihood_calls += 1;
                if l > threshold {
                    stats.accepts += 1;
                    return Ok((new_particle(u, theta, l, threshold), stats));
                }
                if stats.likelihood_calls >= max_calls {
                    return Err(Error::Exhausted {
                        threshold: threshold.ln(),
                        calls: stats.likelihood_calls,
                    });
                }
            }
        }
        next = end;
        if next >= MAX_CANDIDATES {
            return Err(Error::Exhausted {
                threshold: threshold.ln(),
                calls: stats.likelihood_calls,
            });
        }
    }
}

/// Uniform draws from the whole hypercube until one clears the threshold.
pub fn sample_rejection(
    problem: &Problem,
    threshold: LogValue,
    max_calls: u64,
    stream: RngStream,
) -> Result<(Particle, SamplerStats)> {
    sample_rejection_chunked(problem, threshold, max_calls, stream, 1)
}

fn sample_rejection_chunked(
    problem: &Problem,
    threshold: LogValue,
    max_calls: u64,
    stream: RngStream,
    chunk: usize,
) -> Result<(Particle, SamplerStats)> {
    let d = problem.dim();
    draw_region(problem, threshold, max_calls, stream, chunk, |rng| {
        Some((0..d).map(|_| rng.random::<f64>()).collect())
    })
}

/// Uniform draws from the union of `ells` intersected with the hypercube.
/// A candidate covered by `m` ellipsoids is kept with probability `1/m`.
pub fn sample_from_ellipsoids(
    problem: &Problem,
    ells: &[Ellipsoid],
    threshold: LogValue,
    max_calls: u64,
    stream: RngStream,
    chunk: usize,
) -> Result<(Particle, SamplerStats)> {
    let log_vols: Vec<f64> = ells.iter().map(|e| e.log_volume()).collect();
    let max = log_vols.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cumulative = Vec::with_capacity(ells.len());
    let mut acc = 0.0;
    for lv in &log_vols {
        acc += (lv - max).exp();
        cumulative.push(acc);
    }
    draw_region(problem, threshold, max_calls, stream, chunk, |rng| {
        let r = rng.random::<f64>() * acc;
        let j = cumulative.partition_point(|&c| c <= r).min(ells.len() - 1);
        let x = ells[j].sample(rng);
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return None;
        }
        if ells.len() > 1 {
            let overlap = ells.iter().filter(|e| e.contains(&x)).count().max(1);
            if overlap > 1 && rng.random::<f64>() * overlap as f64 >= 1.0 {
                return None;
            }
        }
        Some(x)
    })
}

fn live_coordinates(live: &[Particle]) -> Vec<Vec<f64>> {
    live.iter().map(|p| p.u.clone()).collect()
}

/// Single bounding ellipsoid around `live`, then rejection inside it.
pub fn sample_ellipsoid(
    problem: &Problem,
    live: &[Particle],
    threshold: LogValue,
    cfg: &SamplerConfig,
    stream: RngStream,
) -> Result<(Particle, SamplerStats)> {
    let (e, jitter) = fit_ellipsoid(&live_coordinates(live), cfg.enlargement)?;
    let (p, mut stats) = sample_from_ellipsoids(problem, &[e], threshold, cfg.max_calls, stream, 1)?;
    stats.jitter_fits += jitter as u64;
    Ok((p, stats))
}

/// Clusters `live`, bounds each cluster, and samples the union.
pub fn sample_multi_ellipsoid(
    problem: &Problem,
    live: &[Particle],
    threshold: LogValue,
    cfg: &SamplerConfig,
    stream: RngStream,
) -> Result<(Particle, SamplerStats)> {
    let mut c = cfg.clone();
    c.kind = SamplerKind::MultiEllipsoid;
    let mut rng = RngStream::new(stream.seed, stream.stream_id ^ GEOMETRY_TAG).rng();
    let (geometry, gstats) = build_geometry(&c, &live_coordinates(live), &mut rng)?;
    let Geometry::Ellipsoids(ells) = geometry else {
        unreachable!()
    };
    let (p, mut stats) = sample_from_ellipsoids(problem, &ells, threshold, cfg.max_calls, stream, 1)?;
    stats.add(&gstats);
    Ok((p, stats))
}

const GEOMETRY_TAG: u64 = 0x5a5a_0000_0000_0000;

/// One constrained-prior draw with a prepared geometry. `live` holds the
/// unit coordinates of the surviving live points; `chunk` is the number of
/// region-sampler candidates evaluated concurrently.
pub fn draw(
    problem: &Problem,
    threshold: LogValue,
    cfg: &SamplerConfig,
    live: &[Vec<f64>],
    geometry: &Geometry,
    stream: RngStream,
    chunk: usize,
) -> Result<(Particle, SamplerStats)> {
    let (p, stats) = match (cfg.kind, geometry) {
        (SamplerKind::Rejection, _) => {
            sample_rejection_chunked(problem, threshold, cfg.max_calls, stream, chunk)?
        }
        (SamplerKind::Ellipsoid | SamplerKind::MultiEllipsoid, Geometry::Ellipsoids(ells)) => {
            sample_from_ellipsoids(problem, ells, threshold, cfg.max_calls, stream, chunk)?
        }
        (SamplerKind::RandomWalk, _) => step::random_walk(problem, live, threshold, cfg, stream)?,
        (SamplerKind::Slice, Geometry::Axes(axes)) => {
            step::slice(problem, live, axes, threshold, cfg, stream)?
        }
        (kind, _) => {
            return Err(Error::InvalidConfig(format!(
                "geometry does not match sampler {}",
                kind.name()
            )))
        }
    };
    assert!(
        p.log_like > threshold,
        "sampler returned a point below the threshold"
    );
    Ok((p, stats))
}
