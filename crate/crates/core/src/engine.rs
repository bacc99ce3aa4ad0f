//! The nested sampling loop.
//!
//! Each iteration removes every live point at the lowest likelihood λ (one
//! point unless the likelihood has a plateau), records them as dead points
//! and draws replacements from the prior constrained to L > λ.
//!
//! Randomness is addressed by (seed, family, iteration, replacement) so a
//! run is bit-identical for any worker count: region samplers evaluate
//! candidates concurrently but always accept the lowest-numbered one above
//! the threshold, and step samplers run concurrently only across the
//! replacements of one plateau.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{assign_volumes, importance_window, VolumeMethod};
use crate::logvalue::{log_add_f64, log_sub_f64, log_sum_f64, LogValue};
use crate::problems::Problem;
use crate::rng::RngStream;
use crate::samplers::{
    build_geometry, draw, tune_step_scale, Adaptation, Geometry, SamplerConfig, SamplerStats,
};
use crate::trace::{DeadPoint, Particle, RunTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finalize {
    /// One terminal increment L̄·X; the final live points keep equal weights.
    RemainderEstimate,
    /// Remove the final live points in likelihood order without replacement.
    KillOneByOne,
}

/// How a likelihood plateau at the lowest live level is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauScheme {
    /// Remove all q tied points, then draw q replacements.
    RemoveAll,
    /// Add points above the previous contour until nlive - 1 lie above the
    /// plateau, then remove the q tied points.
    TopUp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGoal {
    /// Weight G of posterior accuracy against evidence accuracy.
    pub posterior_weight: f64,
    /// Extra likelihood calls to spend after the exploratory pass.
    pub budget: u64,
    /// Live points per injected batch.
    pub batch: usize,
}

/// Fraction of peak importance that still counts as important.
pub const IMPORTANCE_WINDOW: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub nlive: usize,
    pub sampler: SamplerConfig,
    /// Stop once the estimated remaining evidence is below this fraction
    /// of the accumulated evidence.
    pub stop_tol: f64,
    pub finalize: Finalize,
    /// `None` means 100·nlive·d.
    pub max_iterations: Option<u64>,
    pub seed: u64,
    pub workers: usize,
    pub dynamic: Option<DynamicGoal>,
    pub plateau: PlateauScheme,
    /// Also stop when the death contour has risen by less than 1e-10 over
    /// the last nlive iterations, i.e. the live points have collapsed onto
    /// the maximum.
    pub optimize: bool,
    /// Iterations between geometry refits; `None` means max(1, nlive/10).
    pub geometry_refresh: Option<u64>,
}

pub const OPTIMIZE_TOL: f64 = 1e-10;

impl RunConfig {
    pub fn new(nlive: usize, sampler: SamplerConfig) -> Self {
        RunConfig {
            nlive,
            sampler,
            stop_tol: 1e-3,
            finalize: Finalize::KillOneByOne,
            max_iterations: None,
            seed: 0,
            workers: 1,
            dynamic: None,
            plateau: PlateauScheme::RemoveAll,
            optimize: false,
            geometry_refresh: None,
        }
    }

    /// Checks the configuration against a problem of dimension `d` and
    /// returns advisory warnings.
    pub fn validate(&self, d: usize) -> Result<Vec<String>> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.nlive < 2 {
            return bad(format!("nlive must be at least 2, got {}", self.nlive));
        }
        if !(self.stop_tol > 0.0) {
            return bad(format!("stop_tol must be positive, got {}", self.stop_tol));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if let Some(g) = &self.dynamic {
            if !(0.0..=1.0).contains(&g.posterior_weight) {
                return bad(format!(
                    "posterior weight G must lie in [0, 1], got {}",
                    g.posterior_weight
                ));
            }
            if g.batch < 2 {
                return bad(format!("dynamic batch must be at least 2, got {}", g.batch));
            }
        }
        self.sampler.validate()?;
        let mut warnings = Vec::new();
        if self.nlive <= d {
            warnings.push(format!(
                "nlive = {} does not exceed the dimension {d}; modes may be missed",
                self.nlive
            ));
        }
        Ok(warnings)
    }

    pub fn max_iterations_for(&self, d: usize) -> u64 {
        self.max_iterations
            .unwrap_or(100 * self.nlive as u64 * d.max(1) as u64)
    }

    pub fn refresh_interval(&self) -> u64 {
        self.geometry_refresh
            .unwrap_or((self.nlive as u64 / 10).max(1))
            .max(1)
    }

    pub fn fingerprint(&self) -> String {
        let dynamic = match &self.dynamic {
            Some(g) => format!("G={},budget={},batch={}", g.posterior_weight, g.budget, g.batch),
            None => "none".into(),
        };
        format!(
            "nlive={};sampler={};stop_tol={};finalize={:?};plateau={:?};optimize={};seed={};dynamic={}",
            self.nlive,
            self.sampler.fingerprint(),
            self.stop_tol,
            self.finalize,
            self.plateau,
            self.optimize,
            self.seed,
            dynamic
        )
    }
}

/// Loop variables of a run in progress.
#[derive(Debug, Clone)]
pub struct EngineState {
    /// Live points in death order.
    pub live: Vec<Particle>,
    pub trace: RunTrace,
    /// Running mean-log estimate of the enclosed prior volume.
    pub log_x: f64,
    /// Evidence accumulated so far by the rectangle rule.
    pub log_z: f64,
    pub stats: SamplerStats,
    pub iteration: u64,
    /// Last death contour; `log 0` before the first iteration.
    pub threshold: LogValue,
    /// Target number of live points.
    pub nlive: usize,
    /// Sampler settings, including the adapted step scale.
    pub sampler: SamplerConfig,
    geometry: Option<Geometry>,
    since_refresh: u64,
    next_id: u64,
    next_order: usize,
    family: u64,
    contour_history: VecDeque<f64>,
    /// Set once every live point sits on one plateau.
    pub exhausted_prior: bool,
}

const INITIAL_INDEX: u64 = (1 << 48) - 1;
const GEOMETRY_FAMILY_OFFSET: u64 = 1 << 15;

fn stream_for(seed: u64, family: u64, iteration: u64, replacement: u64) -> RngStream {
    RngStream::family(seed, family, (iteration << 20) | (replacement & ((1 << 20) - 1)))
}

impl EngineState {
    fn chunk(workers: usize) -> usize {
        if workers > 1 {
            4 * workers
        } else {
            1
        }
    }

    fn insert_live(&mut self, p: Particle) {
        let at = self.live.partition_point(|q| q.death_order(&p).is_lt());
        self.live.insert(at, p);
    }

    fn assign_id(&mut self, mut p: Particle) -> Particle {
        p.id = self.next_id;
        self.next_id += 1;
        p
    }

    fn record_death(&mut self, particle: Particle, n_active: usize) {
        self.trace.dead.push(DeadPoint {
            particle,
            order: self.next_order,
            n_active,
            insertion_index: None,
        });
        self.next_order += 1;
    }

    fn survivor_coordinates(&self) -> Vec<Vec<f64>> {
        self.live.iter().map(|p| p.u.clone()).collect()
    }

    fn refresh_geometry(&mut self, config: &RunConfig) -> Result<()> {
        let due = self.geometry.is_none() || self.since_refresh >= config.refresh_interval();
        if !due {
            return Ok(());
        }
        let coords = self.survivor_coordinates();
        let mut rng =
            RngStream::family(config.seed, self.family + GEOMETRY_FAMILY_OFFSET, self.iteration).rng();
        let (geometry, stats) = build_geometry(&self.sampler, &coords, &mut rng)?;
        self.stats.add(&stats);
        self.geometry = Some(geometry);
        self.since_refresh = 0;
        Ok(())
    }

    /// Draws `count` points above `threshold` from the current survivors.
    fn draw_batch(
        &mut self,
        problem: &Problem,
        config: &RunConfig,
        threshold: LogValue,
        count: usize,
        first_replacement: u64,
    ) -> Result<Vec<Particle>> {
        self.refresh_geometry(config)?;
        let coords = self.survivor_coordinates();
        let geometry = self.geometry.as_ref().expect("geometry refreshed");
        let sampler = &self.sampler;
        let chunk = Self::chunk(config.workers);
        let iteration = self.iteration;
        let family = self.family;
        let one = |r: usize| {
            let stream = stream_for(config.seed, family, iteration, first_replacement + r as u64);
            draw(problem, threshold, sampler, &coords, geometry, stream, chunk)
        };
        let results: Vec<Result<(Particle, SamplerStats)>> = if count == 1 {
            vec![one(0)]
        } else {
            (0..count).into_par_iter().map(one).collect()
        };
        let mut iteration_stats = SamplerStats::default();
        let mut drawn = Vec::with_capacity(count);
        let mut failure = None;
        for r in results {
            match r {
                Ok((p, s)) => {
                    iteration_stats.add(&s);
                    drawn.push(p);
                }
                Err(e) => {
                    if failure.is_none() {
                        failure = Some(e);
                    }
                }
            }
        }
        self.stats.add(&iteration_stats);
        self.trace.likelihood_calls += iteration_stats.likelihood_calls;
        if let Some(e) = failure {
            return Err(e);
        }
        let adapt = match self.sampler.adaptation {
            Adaptation::Continuous => true,
            Adaptation::FreezeAfter(n) => self.iteration < n,
        };
        if adapt && self.sampler.kind == crate::samplers::SamplerKind::RandomWalk {
            self.sampler.step_scale = tune_step_scale(
                &iteration_stats,
                self.sampler.step_scale,
                self.sampler.target_accept,
            );
        }
        Ok(drawn.into_iter().map(|p| self.assign_id(p)).collect())
    }

    fn compress(&mut self, n: usize, q: usize, log_like: LogValue) {
        let shrink: f64 = ((n + 1 - q)..=n).map(|j| 1.0 / j as f64).sum();
        let new_log_x = self.log_x - shrink;
        let slab = log_sub_f64(self.log_x, new_log_x);
        if !log_like.is_zero() {
            self.log_z = log_add_f64(self.log_z, slab + log_like.ln());
        }
        self.log_x = new_log_x;
    }
}

/// Draws the initial live points from the prior.
pub fn initialize(problem: &Problem, config: &RunConfig) -> Result<EngineState> {
    initialize_family(problem, config, 0)
}

fn initialize_family(problem: &Problem, config: &RunConfig, family: u64) -> Result<EngineState> {
    let d = problem.dim();
    let mut warnings = config.validate(d)?;
    let stream = RngStream::family(config.seed, family, INITIAL_INDEX);
    let draws: Vec<(Vec<f64>, Vec<f64>, LogValue)> = (0..config.nlive as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.slot(i);
            let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let (theta, l) = crate::samplers::evaluate(problem, &u);
            (u, theta, l)
        })
        .collect();
    let mut state = EngineState {
        live: Vec::with_capacity(config.nlive),
        trace: RunTrace {
            config_fingerprint: config.fingerprint(),
            problem_fingerprint: problem.fingerprint(),
            likelihood_calls: config.nlive as u64,
            ..Default::default()
        },
        log_x: 0.0,
        log_z: f64::NEG_INFINITY,
        stats: SamplerStats::default(),
        iteration: 0,
        threshold: LogValue::ZERO,
        nlive: config.nlive,
        sampler: config.sampler.clone(),
        geometry: None,
        since_refresh: 0,
        next_id: 0,
        next_order: 0,
        family,
        contour_history: VecDeque::new(),
        exhausted_prior: false,
    };
    for (u, theta, log_like) in draws {
        let p = Particle {
            u,
            theta,
            log_like,
            birth_log_like: LogValue::ZERO,
            id: 0,
        };
        let p = state.assign_id(p);
        state.insert_live(p);
    }
    state.trace.warnings.append(&mut warnings);
    Ok(state)
}

/// One iteration. Returns `Ok(false)` without changing anything when every
/// live point lies on a single plateau, which ends the run.
pub fn iterate(state: &mut EngineState, problem: &Problem, config: &RunConfig) -> Result<bool> {
    if state.live.is_empty() {
        return Ok(false);
    }
    let lowest = state.live[0].log_like;
    let tied = state.live.iter().take_while(|p| p.log_like == lowest).count();
    if tied == state.live.len() {
        state.exhausted_prior = true;
        return Ok(false);
    }
    if config.plateau == PlateauScheme::TopUp && tied > 1 {
        top_up(state, problem, config)?;
    }
    let lambda = state.live[0].log_like;
    let q = state.live.iter().take_while(|p| p.log_like == lambda).count();
    let n = state.live.len();
    let dead: Vec<Particle> = state.live.drain(0..q).collect();
    for (j, p) in dead.into_iter().enumerate() {
        state.record_death(p, n - j);
    }
    state.compress(n, q, lambda);
    state.threshold = lambda;

    let missing = state.nlive.saturating_sub(state.live.len());
    if missing > 0 {
        let drawn = state.draw_batch(problem, config, lambda, missing, 0)?;
        for p in drawn {
            state.insert_live(p);
        }
    }
    state.iteration += 1;
    state.since_refresh += 1;
    state.contour_history.push_back(lambda.ln());
    while state.contour_history.len() > state.nlive + 1 {
        state.contour_history.pop_front();
    }
    Ok(true)
}

/// Adds points above the previous contour until nlive - 1 live points lie
/// strictly above the lowest level.
fn top_up(state: &mut EngineState, problem: &Problem, config: &RunConfig) -> Result<()> {
    let floor = state.threshold;
    let mut r = 1u64 << 19;
    loop {
        let lowest = state.live[0].log_like;
        let above = state.live.iter().filter(|p| p.log_like > lowest).count();
        if above + 1 >= state.nlive {
            return Ok(());
        }
        let drawn = state.draw_batch(problem, config, floor, 1, r)?;
        r += 1;
        for p in drawn {
            state.insert_live(p);
        }
    }
}

/// True once the estimated remaining evidence L̄·X is at most `stop_tol`
/// times the accumulated evidence, or, in optimize mode, once the death
/// contour has stalled.
pub fn should_stop(state: &EngineState, config: &RunConfig) -> bool {
    if state.iteration == 0 {
        return false;
    }
    if state.live.is_empty() {
        return true;
    }
    let log_mean = log_sum_f64(state.live.iter().map(|p| p.log_like.ln())) - (state.live.len() as f64).ln();
    let remaining = log_mean + state.log_x;
    if remaining == f64::NEG_INFINITY || remaining - state.log_z <= config.stop_tol.ln() {
        return true;
    }
    if config.optimize && state.contour_history.len() > state.nlive {
        let first = state
            .contour_history
            .front()
            .copied()
            .unwrap_or(f64::NEG_INFINITY);
        let last = state.contour_history.back().copied().unwrap_or(f64::NEG_INFINITY);
        if last - first < OPTIMIZE_TOL {
            return true;
        }
    }
    false
}

/// Closes the run: either kills the live points one by one or keeps them
/// as the final live block.
pub fn finalize(state: EngineState, config: &RunConfig) -> RunTrace {
    let trace = close(state, config);
    debug_assert!(trace.validate().is_ok(), "{:?}", trace.validate());
    trace
}

/// As [`finalize`], for batches whose birth contour lies in another run.
fn close(mut state: EngineState, config: &RunConfig) -> RunTrace {
    let live = std::mem::take(&mut state.live);
    match config.finalize {
        Finalize::KillOneByOne => {
            let n = live.len();
            for (j, p) in live.into_iter().enumerate() {
                state.record_death(p, n - j);
            }
        }
        Finalize::RemainderEstimate => {
            state.trace.final_live = live;
        }
    }
    let mut trace = state.trace;
    let indexes = trace.recomputed_insertion_indexes();
    for (d, i) in trace.dead.iter_mut().zip(indexes) {
        d.insertion_index = i;
    }
    trace
}

fn is_truncation(e: &Error) -> bool {
    matches!(e, Error::Exhausted { .. } | Error::NumericalContour { .. })
}

/// Runs to the stopping rule. A dynamic goal in the configuration
/// dispatches to [`run_dynamic`].
pub fn run(problem: &Problem, config: &RunConfig) -> Result<RunTrace> {
    if config.dynamic.is_some() {
        return run_dynamic(problem, config);
    }
    in_pool(config.workers, || run_static(problem, config, 0))
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers <= 1 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn run_static(problem: &Problem, config: &RunConfig, family: u64) -> Result<RunTrace> {
    let mut state = initialize_family(problem, config, family)?;
    let max_iterations = config.max_iterations_for(problem.dim());
    loop {
        if state.iteration >= max_iterations {
            state
                .trace
                .warnings
                .push(format!("stopped at max_iterations = {max_iterations}"));
            break;
        }
        match iterate(&mut state, problem, config) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) if is_truncation(&e) => {
                state.trace.truncated = true;
                state.trace.warnings.push(format!("run truncated: {e}"));
                break;
            }
            Err(e) => return Err(e),
        }
        if should_stop(&state, config) {
            break;
        }
    }
    if state.stats.stale_walks > 0 {
        state.trace.warnings.push(format!(
            "{} random walks never moved from their start point",
            state.stats.stale_walks
        ));
    }
    Ok(finalize(state, config))
}

/// Weaves independent runs of one problem into a single run whose live
/// point count at each contour is the sum over the inputs. Final live
/// points become dead points, killed in likelihood order.
pub fn merge(traces: &[RunTrace]) -> Result<RunTrace> {
    let Some(first) = traces.first() else {
        return Err(Error::InputDomain("merge needs at least one trace".into()));
    };
    if traces.len() == 1 {
        return Ok(first.clone());
    }
    if let Some(t) = traces
        .iter()
        .find(|t| t.problem_fingerprint != first.problem_fingerprint)
    {
        return Err(Error::Incompatible(format!(
            "cannot merge runs of '{}' and '{}'",
            first.problem_fingerprint, t.problem_fingerprint
        )));
    }
    let mut pooled: Vec<(usize, Particle)> = Vec::new();
    for (k, t) in traces.iter().enumerate() {
        pooled.extend(t.particles().cloned().map(|p| (k, p)));
    }
    pooled.sort_by(|a, b| {
        a.1.log_like
            .total_cmp(&b.1.log_like)
            .then(a.0.cmp(&b.0))
            .then(a.1.id.cmp(&b.1.id))
    });
    let particles: Vec<Particle> = pooled
        .into_iter()
        .enumerate()
        .map(|(i, (_, mut p))| {
            p.id = i as u64;
            p
        })
        .collect();
    let mut merged = RunTrace::from_particles(particles, Vec::new());
    merged.problem_fingerprint = first.problem_fingerprint.clone();
    merged.config_fingerprint = format!(
        "merge[{}]",
        traces
            .iter()
            .map(|t| t.config_fingerprint.as_str())
            .collect::<Vec<_>>()
            .join(" | ")
    );
    merged.likelihood_calls = traces.iter().map(|t| t.likelihood_calls).sum();
    merged.truncated = traces.iter().any(|t| t.truncated);
    merged.warnings = traces.iter().flat_map(|t| t.warnings.clone()).collect();
    merged.validate()?;
    Ok(merged)
}

/// Exploratory static run followed by batches of extra live points injected
/// where the importance function peaks, until the call budget is spent.
pub fn run_dynamic(problem: &Problem, config: &RunConfig) -> Result<RunTrace> {
    let Some(goal) = config.dynamic.clone() else {
        return Err(Error::InvalidConfig("run_dynamic needs a dynamic goal".into()));
    };
    config.validate(problem.dim())?;
    in_pool(config.workers, || {
        let mut explore_cfg = config.clone();
        explore_cfg.dynamic = None;
        let exploratory = run_static(problem, &explore_cfg, 0)?;
        let per_point = exploratory.likelihood_calls as f64 / exploratory.particles().count().max(1) as f64;
        let batch_cost = (per_point * goal.batch as f64).ceil() as u64;
        if goal.budget < batch_cost.max(1) {
            let mut t = exploratory;
            if goal.budget > 0 {
                t.warnings.push(format!(
                    "dynamic budget {} is below the cost of one batch (~{batch_cost} calls)",
                    goal.budget
                ));
            }
            t.config_fingerprint = config.fingerprint();
            return Ok(t);
        }
        let mut current = exploratory;
        let mut spent = 0u64;
        let mut batch_index = 0u64;
        while spent < goal.budget {
            let volumes = assign_volumes(&current, &VolumeMethod::MeanLog)?;
            let (birth, end) = importance_window(&current, &volumes, goal.posterior_weight)?;
            let batch = run_batch(problem, config, &current, birth, end, goal.batch, batch_index + 1)?;
            spent += batch.likelihood_calls;
            batch_index += 1;
            let truncated = batch.truncated;
            current = merge(&[current, batch])?;
            if truncated {
                break;
            }
        }
        current.config_fingerprint = config.fingerprint();
        Ok(current)
    })
}

/// A run of `size` live points born at contour `birth` on top of `base`,
/// stopped once its lowest live point lies above `end`.
fn run_batch(
    problem: &Problem,
    config: &RunConfig,
    base: &RunTrace,
    birth: LogValue,
    end: LogValue,
    size: usize,
    family: u64,
) -> Result<RunTrace> {
    let mut batch_cfg = config.clone();
    batch_cfg.nlive = size;
    batch_cfg.dynamic = None;
    let mut state = initialize_family(problem, &batch_cfg, family)?;
    if !birth.is_zero() {
        // Replace the prior draws by constrained draws seeded from the base
        // run's survivors at the birth contour.
        let survivors: Vec<Particle> = base
            .particles()
            .filter(|p| p.birth_log_like < birth && p.log_like > birth)
            .cloned()
            .collect();
        if survivors.is_empty() {
            return Err(Error::InputDomain(
                "no base-run survivors at the batch birth contour".into(),
            ));
        }
        state.live = survivors;
        state.next_id = 0;
        state.trace.likelihood_calls = 0;
        state.geometry = None;
        let drawn = state.draw_batch(problem, &batch_cfg, birth, size, 0)?;
        state.live.clear();
        for p in drawn {
            state.insert_live(p);
        }
        state.threshold = birth;
    }
    let max_iterations = batch_cfg.max_iterations_for(problem.dim());
    while state.live.first().is_some_and(|p| p.log_like <= end) && state.iteration < max_iterations {
        match iterate(&mut state, problem, &batch_cfg) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) if is_truncation(&e) => {
                state.trace.truncated = true;
                state.trace.warnings.push(format!("batch truncated: {e}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let mut final_cfg = batch_cfg;
    final_cfg.finalize = Finalize::RemainderEstimate;
    Ok(close(state, &final_cfg))
}

/// Predicted speed-ups for `ncpu` workers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupPrediction {
    /// Candidates beyond the first acceptance are discarded: min(ncpu, 1/ε).
    pub discard: f64,
    /// Valid candidates are kept for later iterations: nlive·ln(1 + ncpu/nlive).
    pub defer: f64,
}

pub fn parallel_speedup_model(ncpu: usize, nlive: usize, efficiency: f64) -> Result<SpeedupPrediction> {
    if ncpu == 0 || nlive == 0 || !(efficiency > 0.0) {
        return Err(Error::InputDomain(
            "speed-up model needs positive ncpu, nlive and efficiency".into(),
        ));
    }
    let (c, n) = (ncpu as f64, nlive as f64);
    Ok(SpeedupPrediction {
        discard: c.min(1.0 / efficiency),
        defer: n * (c / n).ln_1p(),
    })
}

#[cfg(test)]
mod tests;
