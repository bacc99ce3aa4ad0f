//! The run record every estimator is computed from.
//!
//! A trace stores, for each particle, the contour it was born at and the
//! contour it died at. Per-contour live-point counts are derived from those
//! pairs, which makes static, dynamic and merged runs share one
//! representation.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::logvalue::LogValue;

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// Unit-hypercube coordinates. Empty for particles read back from disk.
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub log_like: LogValue,
    /// Threshold in force when the particle was drawn; `log 0` for prior draws.
    pub birth_log_like: LogValue,
    /// Creation order; secondary key when likelihoods tie.
    pub id: u64,
}

impl Particle {
    /// Likelihood order with creation order breaking ties.
    pub fn death_order(&self, other: &Particle) -> Ordering {
        self.log_like
            .total_cmp(&other.log_like)
            .then(self.id.cmp(&other.id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeadPoint {
    pub particle: Particle,
    pub order: usize,
    /// Live points whose (birth, death] interval covers this death contour.
    pub n_active: usize,
    /// Rank of the particle's likelihood among the survivors at its birth.
    pub insertion_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub dead: Vec<DeadPoint>,
    /// Live points left at termination when the run closes with a
    /// remaining-evidence estimate; empty when they were killed one by one.
    pub final_live: Vec<Particle>,
    pub config_fingerprint: String,
    pub problem_fingerprint: String,
    pub likelihood_calls: u64,
    /// Set when a sampler gave up before the stopping rule was met.
    pub truncated: bool,
    pub warnings: Vec<String>,
}

impl RunTrace {
    /// A trace over the given particles with `n_active` and insertion
    /// indexes derived from their birth and death contours.
    pub fn from_particles(mut dead: Vec<Particle>, mut final_live: Vec<Particle>) -> RunTrace {
        dead.sort_by(|a, b| a.death_order(b));
        final_live.sort_by(|a, b| a.death_order(b));
        let mut trace = RunTrace {
            dead: dead
                .into_iter()
                .enumerate()
                .map(|(order, particle)| DeadPoint {
                    particle,
                    order,
                    n_active: 0,
                    insertion_index: None,
                })
                .collect(),
            final_live,
            ..Default::default()
        };
        trace.refresh_counts();
        trace
    }

    /// Overwrites `n_active` and `insertion_index` of every dead point with
    /// the values implied by birth/death pairs.
    pub fn refresh_counts(&mut self) {
        let counts = self.recomputed_n_active();
        let indexes = self.recomputed_insertion_indexes();
        for ((d, n), i) in self.dead.iter_mut().zip(counts).zip(indexes) {
            d.n_active = n;
            d.insertion_index = i;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.dead.is_empty() && self.final_live.is_empty()
    }

    /// Every particle the run created, dead ones first.
    pub fn particles(&self) -> impl Iterator<Item = &Particle> {
        self.dead
            .iter()
            .map(|d| &d.particle)
            .chain(self.final_live.iter())
    }

    /// Number of stored particles with `birth < contour <= log_like`.
    pub fn active_count(&self, contour: LogValue) -> usize {
        self.particles()
            .filter(|p| p.birth_log_like < contour && contour <= p.log_like)
            .count()
    }

    /// Number of particles drawn from the unconstrained prior.
    pub fn initial_live(&self) -> usize {
        self.particles().filter(|p| p.birth_log_like.is_zero()).count()
    }

    pub fn max_likelihood_particle(&self) -> Option<&Particle> {
        self.particles().max_by(|a, b| a.death_order(b))
    }

    /// `n_active` of every dead point recomputed from birth/death pairs.
    /// Particles dying at the same likelihood are ordered by id, so `q`
    /// tied deaths out of `n` record `n, n - 1, ..., n - q + 1`.
    pub fn recomputed_n_active(&self) -> Vec<usize> {
        let mut births: Vec<f64> = self.particles().map(|p| p.birth_log_like.ln()).collect();
        births.sort_by(f64::total_cmp);
        let mut keys: Vec<(f64, u64)> = self.particles().map(|p| (p.log_like.ln(), p.id)).collect();
        keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        self.dead
            .iter()
            .map(|d| {
                let key = (d.particle.log_like.ln(), d.particle.id);
                let rank =
                    keys.partition_point(|k| k.0.total_cmp(&key.0).then(k.1.cmp(&key.1)) == Ordering::Less);
                lower_bound(&births, key.0) - rank
            })
            .collect()
    }

    /// Insertion indexes recomputed from birth/death pairs, in dead-point
    /// order followed by final live points. Prior draws have none.
    pub fn recomputed_insertion_indexes(&self) -> Vec<Option<usize>> {
        let all: Vec<&Particle> = self.particles().collect();
        let births: Vec<f64> = all.iter().map(|p| p.birth_log_like.ln()).collect();
        let likes: Vec<f64> = all.iter().map(|p| p.log_like.ln()).collect();

        let mut sorted_likes = likes.clone();
        sorted_likes.sort_by(f64::total_cmp);

        // Queries: survivors at birth b with likelihood below the particle's.
        let mut queries: Vec<usize> = (0..all.len())
            .filter(|&i| births[i] > f64::NEG_INFINITY)
            .collect();
        queries.sort_by(|&a, &b| births[a].total_cmp(&births[b]));
        let mut by_birth: Vec<usize> = (0..all.len()).collect();
        by_birth.sort_by(|&a, &b| births[a].total_cmp(&births[b]));

        let mut fenwick = Fenwick::new(sorted_likes.len());
        let mut out = vec![None; all.len()];
        let mut next = 0;
        for &q in &queries {
            let b = births[q];
            while next < by_birth.len() && births[by_birth[next]] < b {
                let p = by_birth[next];
                fenwick.add(lower_bound(&sorted_likes, likes[p]));
                next += 1;
            }
            let born_before_and_below = fenwick.prefix(lower_bound(&sorted_likes, likes[q]));
            let dead_by_birth = upper_bound(&sorted_likes, b);
            out[q] = Some(born_before_and_below - dead_by_birth);
        }
        out
    }

    /// Number of ranks available to a particle born at `birth`: the
    /// survivors of that contour plus one.
    pub fn insertion_slots(&self, birth: LogValue) -> usize {
        let counter = ActiveCounter::new(self);
        counter.survivors(birth.ln()) + 1
    }

    /// Checks the structural invariants every trace must satisfy.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidTrace(msg));
        for (i, w) in self.dead.windows(2).enumerate() {
            if w[1].particle.log_like < w[0].particle.log_like {
                return fail(format!("death contours decrease at dead point {}", i + 1));
            }
            if w[1].order <= w[0].order {
                return fail(format!("dead point order not increasing at {}", i + 1));
            }
        }
        let recomputed = self.recomputed_n_active();
        for (d, &n) in self.dead.iter().zip(&recomputed) {
            if d.n_active == 0 {
                return fail(format!("dead point {} has n_active = 0", d.order));
            }
            if d.n_active != n {
                return fail(format!(
                    "dead point {} records n_active {} but birth/death pairs give {}",
                    d.order, d.n_active, n
                ));
            }
        }
        let mut contours: Vec<f64> = self.dead.iter().map(|d| d.particle.log_like.ln()).collect();
        contours.dedup();
        for p in self.particles() {
            if !(p.log_like > p.birth_log_like) {
                return fail(format!(
                    "particle {} has log_like {} not above its birth contour {}",
                    p.id, p.log_like, p.birth_log_like
                ));
            }
            if p.u.iter().any(|u| !(0.0..=1.0).contains(u)) {
                return fail(format!("particle {} leaves the unit hypercube", p.id));
            }
            let b = p.birth_log_like.ln();
            if b > f64::NEG_INFINITY && contours.binary_search_by(|c| c.total_cmp(&b)).is_err() {
                return fail(format!(
                    "particle {} was born at {} which is not a death contour",
                    p.id, b
                ));
            }
        }
        if let Some(last) = self.dead.last() {
            if let Some(p) = self
                .final_live
                .iter()
                .find(|p| p.log_like < last.particle.log_like)
            {
                return fail(format!("final live particle {} lies below the last death", p.id));
            }
        }
        Ok(())
    }
}

/// O(log N) survivor counts over a trace.
pub(crate) struct ActiveCounter {
    births: Vec<f64>,
    deaths: Vec<f64>,
}

impl ActiveCounter {
    pub(crate) fn new(trace: &RunTrace) -> Self {
        let mut births: Vec<f64> = trace.particles().map(|p| p.birth_log_like.ln()).collect();
        let mut deaths: Vec<f64> = trace.particles().map(|p| p.log_like.ln()).collect();
        births.sort_by(f64::total_cmp);
        deaths.sort_by(f64::total_cmp);
        ActiveCounter { births, deaths }
    }

    /// Particles alive strictly above `contour` that were born below it.
    pub(crate) fn survivors(&self, contour: f64) -> usize {
        lower_bound(&self.births, contour) - upper_bound(&self.deaths, contour)
    }
}

/// Index of the first element `>= x`.
pub(crate) fn lower_bound(sorted: &[f64], x: f64) -> usize {
    sorted.partition_point(|v| v.total_cmp(&x) == Ordering::Less)
}

/// Index of the first element `> x`.
pub(crate) fn upper_bound(sorted: &[f64], x: f64) -> usize {
    sorted.partition_point(|v| v.total_cmp(&x) != Ordering::Greater)
}

struct Fenwick {
    tree: Vec<usize>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0; n + 1] }
    }

    fn add(&mut self, index: usize) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over indexes `< end`.
    fn prefix(&self, end: usize) -> usize {
        let mut i = end;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn particle(id: u64, birth: f64, like: f64) -> Particle {
        Particle {
            u: vec![],
            theta: vec![like],
            log_like: LogValue::from_ln(like),
            birth_log_like: LogValue::from_ln(birth),
            id,
        }
    }

    /// Static run with `n` live points whose i-th death is at contour `i`;
    /// every replacement is born at the contour it replaces.
    pub(crate) fn static_trace(n: usize, deaths: usize) -> RunTrace {
        let ninf = f64::NEG_INFINITY;
        let mut live: Vec<Particle> = (0..n).map(|i| particle(i as u64, ninf, (i + 1) as f64)).collect();
        let mut dead = Vec::new();
        for k in 0..deaths {
            live.sort_by(|a, b| a.death_order(b));
            let worst = live.remove(0);
            let lambda = worst.log_like.ln();
            dead.push(DeadPoint {
                particle: worst,
                order: k,
                n_active: n,
                insertion_index: None,
            });
            live.push(particle((n + k) as u64, lambda, lambda + n as f64));
        }
        live.sort_by(|a, b| a.death_order(b));
        RunTrace {
            dead,
            final_live: live,
            ..Default::default()
        }
    }

    #[test]
    fn static_run_has_constant_active_count() {
        let t = static_trace(100, 500);
        let first = t.dead.first().unwrap().particle.log_like.ln();
        let last = t.dead.last().unwrap().particle.log_like.ln();
        for c in [first + 0.5, (first + last) / 2.0, last - 0.25] {
            assert_eq!(t.active_count(LogValue::from_ln(c)), 100);
        }
        assert_eq!(t.recomputed_n_active(), vec![100; 500]);
        t.validate().unwrap();
    }

    #[test]
    fn contour_above_everything_is_empty() {
        let t = static_trace(10, 30);
        assert_eq!(t.active_count(LogValue::from_ln(1e9)), 0);
    }

    #[test]
    fn pooled_traces_add_active_counts() {
        let a = static_trace(250, 100);
        let mut b = static_trace(250, 100);
        for d in &mut b.dead {
            d.particle.id += 10_000;
        }
        let mut pooled = a.clone();
        pooled.dead.extend(b.dead);
        pooled.final_live.extend(b.final_live);
        assert_eq!(pooled.active_count(LogValue::from_ln(1.5)), 500);
    }

    #[test]
    fn insertion_indexes_recompute_to_survivor_ranks() {
        let t = static_trace(4, 6);
        let idx = t.recomputed_insertion_indexes();
        // Each replacement lands above all survivors.
        for (p, i) in t.particles().zip(&idx) {
            if p.birth_log_like.is_zero() {
                assert_eq!(*i, None);
            } else {
                assert_eq!(*i, Some(3), "particle {}", p.id);
            }
        }
        assert_eq!(t.insertion_slots(LogValue::from_ln(2.0)), 4);
    }

    #[test]
    fn validate_rejects_broken_counts() {
        let mut t = static_trace(5, 10);
        t.dead[3].n_active = 4;
        assert!(matches!(t.validate(), Err(Error::InvalidTrace(_))));
    }
}
