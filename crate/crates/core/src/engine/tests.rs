use super::*;
use crate::estimators::{assign_volumes, log_evidence, VolumeMethod};
use crate::problems::{cone_volume_problem, plateau_problem, truncated_gaussian};
use crate::samplers::SamplerKind;

fn config(kind: SamplerKind, nlive: usize, d: usize, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(nlive, SamplerConfig::new(kind, d));
    c.seed = seed;
    c
}

fn log_z(t: &RunTrace) -> f64 {
    log_evidence(t, &assign_volumes(t, &VolumeMethod::MeanLog).unwrap())
        .unwrap()
        .ln()
}

#[test]
fn static_runs_are_valid_and_close_with_a_countdown() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let t = run(&p, &config(SamplerKind::Ellipsoid, 100, 2, 1)).unwrap();
    t.validate().unwrap();
    assert!(t.final_live.is_empty());
    let n = t.dead.len();
    // Killing the last live points one by one counts down to 1.
    let tail: Vec<usize> = t.dead[n - 100..].iter().map(|d| d.n_active).collect();
    assert_eq!(tail, (1..=100).rev().collect::<Vec<_>>());
    assert!(t.dead[..n - 100].iter().all(|d| d.n_active == 100));
    assert_eq!(t.initial_live(), 100);
    assert!(t.likelihood_calls >= n as u64);
    for d in &t.dead {
        assert_eq!(d.insertion_index.is_some(), !d.particle.birth_log_like.is_zero());
    }
}

#[test]
fn remainder_mode_keeps_final_live_points() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let mut c = config(SamplerKind::Slice, 50, 2, 2);
    c.finalize = Finalize::RemainderEstimate;
    let t = run(&p, &c).unwrap();
    t.validate().unwrap();
    assert_eq!(t.final_live.len(), 50);
    assert!(t.dead.iter().all(|d| d.n_active == 50));
}

#[test]
fn runs_are_reproducible_for_any_worker_count() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    for kind in [
        SamplerKind::Rejection,
        SamplerKind::MultiEllipsoid,
        SamplerKind::Slice,
    ] {
        let c = config(kind, 40, 2, 3);
        let a = run(&p, &c).unwrap();
        let b = run(&p, &c).unwrap();
        assert_eq!(a, b);
        let mut c4 = c.clone();
        c4.workers = 4;
        let d = run(&p, &c4).unwrap();
        assert_eq!(a.dead, d.dead, "{}", kind.name());
        assert_eq!(a.likelihood_calls, d.likelihood_calls);
    }
}

#[test]
fn different_seeds_differ() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let a = run(&p, &config(SamplerKind::Slice, 30, 2, 4)).unwrap();
    let b = run(&p, &config(SamplerKind::Slice, 30, 2, 5)).unwrap();
    assert_ne!(a.dead, b.dead);
}

#[test]
fn invalid_configurations() {
    let p = truncated_gaussian(5.0, 3).unwrap();
    assert!(matches!(
        run(&p, &config(SamplerKind::Slice, 1, 3, 0)),
        Err(Error::InvalidConfig(_))
    ));
    let mut c = config(SamplerKind::Slice, 10, 3, 0);
    c.stop_tol = 0.0;
    assert!(run(&p, &c).is_err());
    let mut c = config(SamplerKind::Slice, 10, 3, 0);
    c.workers = 0;
    assert!(run(&p, &c).is_err());
    let w = config(SamplerKind::Slice, 3, 3, 0).validate(3).unwrap();
    assert_eq!(w.len(), 1);
    assert!(config(SamplerKind::Slice, 4, 3, 0)
        .validate(3)
        .unwrap()
        .is_empty());
}

#[test]
fn iteration_cap_is_reported() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let mut c = config(SamplerKind::Slice, 20, 2, 6);
    c.max_iterations = Some(15);
    let t = run(&p, &c).unwrap();
    assert_eq!(t.dead.len(), 15 + 20);
    assert!(t.warnings.iter().any(|w| w.contains("max_iterations")));
    assert_eq!(config(SamplerKind::Slice, 20, 3, 0).max_iterations_for(3), 6000);
}

#[test]
fn exhausted_sampler_truncates_the_run() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let mut c = config(SamplerKind::Rejection, 20, 2, 7);
    c.sampler.max_calls = 50;
    let t = run(&p, &c).unwrap();
    assert!(t.truncated);
    assert!(t.warnings.iter().any(|w| w.contains("truncated")));
    t.validate().unwrap();
}

#[test]
fn stopping_rule_bounds_the_remainder() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let c = config(SamplerKind::Ellipsoid, 50, 2, 8);
    let mut state = initialize(&p, &c).unwrap();
    assert!(!should_stop(&state, &c));
    let mut steps = 0;
    while !should_stop(&state, &c) {
        assert!(iterate(&mut state, &p, &c).unwrap());
        steps += 1;
    }
    assert!(steps > 50 * 2);
    let mean_l = state.live.iter().map(|x| x.log_like.exp()).sum::<f64>() / 50.0;
    assert!(mean_l * state.log_x.exp() <= c.stop_tol * state.log_z.exp() * (1.0 + 1e-12));
}

#[test]
fn optimize_mode_finds_the_peak() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let mut c = config(SamplerKind::Slice, 50, 2, 9);
    c.optimize = true;
    c.stop_tol = 1e-300;
    c.max_iterations = Some(20_000);
    let t = run(&p, &c).unwrap();
    assert!(!t.warnings.iter().any(|w| w.contains("max_iterations")));
    let best = t.max_likelihood_particle().unwrap();
    assert!(best.log_like.ln() > -1e-8, "best {}", best.log_like);
}

#[test]
fn plateau_levels_are_removed_together() {
    let p = plateau_problem(&[(0.0, 0.9), (2f64.ln(), 0.09), (3f64.ln(), 0.01)]).unwrap();
    let t = run(&p, &config(SamplerKind::Rejection, 200, 1, 10)).unwrap();
    t.validate().unwrap();
    // The bottom level dies in one iteration, recorded n, n - 1, ...
    let bottom: Vec<usize> = t
        .dead
        .iter()
        .take_while(|d| d.particle.log_like.ln() == 0.0)
        .map(|d| d.n_active)
        .collect();
    assert!(bottom.len() > 150);
    assert!(bottom.windows(2).all(|w| w[1] + 1 == w[0]));
    assert_eq!(bottom[0], 200);
    assert!((log_z(&t) - 1.11f64.ln()).abs() < 0.1);
}

#[test]
fn top_up_scheme_keeps_enough_points_above_the_plateau() {
    let p = plateau_problem(&[(0.0, 0.5), (1.0, 0.5)]).unwrap();
    let mut c = config(SamplerKind::Rejection, 100, 1, 11);
    c.plateau = PlateauScheme::TopUp;
    let t = run(&p, &c).unwrap();
    t.validate().unwrap();
    let truth = (0.5 + 0.5 * 1f64.exp()).ln();
    assert!((log_z(&t) - truth).abs() < 0.15);
    // Enough new points were added that the plateau removal starts above nlive.
    assert!(t.dead[0].n_active > 100);
}

#[test]
fn single_plateau_ends_immediately() {
    let p = plateau_problem(&[(1.7, 1.0)]).unwrap();
    let t = run(&p, &config(SamplerKind::Rejection, 30, 1, 12)).unwrap();
    assert_eq!(t.dead.len(), 30);
    assert!((log_z(&t) - 1.7).abs() < 1e-12);
}

#[test]
fn merging_adds_live_point_counts() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let a = run(&p, &config(SamplerKind::Slice, 30, 2, 13)).unwrap();
    let b = run(&p, &config(SamplerKind::Slice, 20, 2, 14)).unwrap();
    assert_eq!(merge(std::slice::from_ref(&a)).unwrap(), a);
    let m = merge(&[a.clone(), b.clone()]).unwrap();
    m.validate().unwrap();
    assert_eq!(m.dead.len(), a.dead.len() + b.dead.len());
    assert_eq!(m.initial_live(), 50);
    assert_eq!(m.dead[0].n_active, 50);
    assert_eq!(m.likelihood_calls, a.likelihood_calls + b.likelihood_calls);
    assert!(merge(&[]).is_err());

    let other = run(
        &cone_volume_problem(2).unwrap(),
        &config(SamplerKind::Slice, 20, 2, 15),
    )
    .unwrap();
    assert!(matches!(merge(&[a, other]), Err(Error::Incompatible(_))));
}

#[test]
fn merging_remainder_runs_kills_their_final_points() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let mut c = config(SamplerKind::Slice, 20, 2, 16);
    c.finalize = Finalize::RemainderEstimate;
    let a = run(&p, &c).unwrap();
    c.seed = 17;
    let b = run(&p, &c).unwrap();
    let m = merge(&[a, b]).unwrap();
    assert!(m.final_live.is_empty());
    assert_eq!(m.dead.last().unwrap().n_active, 1);
}

fn dynamic(budget: u64, g: f64) -> RunConfig {
    let mut c = config(SamplerKind::Slice, 50, 2, 18);
    c.dynamic = Some(DynamicGoal {
        posterior_weight: g,
        budget,
        batch: 25,
    });
    c
}

#[test]
fn dynamic_without_budget_is_the_static_run() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let mut s = dynamic(0, 1.0);
    let t = run(&p, &s).unwrap();
    s.dynamic = None;
    let base = run(&p, &s).unwrap();
    assert_eq!(t.dead, base.dead);
    assert!(t.warnings.is_empty());

    let small = run(&p, &dynamic(10, 1.0)).unwrap();
    assert_eq!(small.dead, base.dead);
    assert!(small.warnings.iter().any(|w| w.contains("budget")));
}

#[test]
fn dynamic_batches_thicken_the_posterior_bulk() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let t = run(&p, &dynamic(200_000, 1.0)).unwrap();
    t.validate().unwrap();
    let most = t.dead.iter().map(|d| d.n_active).max().unwrap();
    assert!(most > 50);
    assert!((log_z(&t) + 3.46).abs() < 0.5);
    // The prior end was not revisited.
    assert_eq!(t.dead[0].n_active, 50);
}

#[test]
fn evidence_goal_batches_start_at_the_prior() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let t = run(&p, &dynamic(50_000, 0.0)).unwrap();
    t.validate().unwrap();
    assert!(t.initial_live() > 50);
}

#[test]
fn dynamic_goal_validation() {
    let p = truncated_gaussian(5.0, 2).unwrap();
    let mut c = dynamic(100, 1.5);
    assert!(run(&p, &c).is_err());
    c = dynamic(100, 0.5);
    c.dynamic.as_mut().unwrap().batch = 1;
    assert!(run(&p, &c).is_err());
}

#[test]
fn speedup_model() {
    let s = parallel_speedup_model(4, 500, 0.1).unwrap();
    assert_eq!(s.discard, 4.0);
    assert!((s.defer - 500.0 * (1.0f64 + 4.0 / 500.0).ln()).abs() < 1e-12);
    assert_eq!(parallel_speedup_model(64, 500, 0.05).unwrap().discard, 20.0);
    assert!(parallel_speedup_model(0, 500, 0.1).is_err());
    assert!(parallel_speedup_model(4, 500, 0.0).is_err());
}

#[test]
fn fingerprints_track_settings() {
    let a = config(SamplerKind::Slice, 50, 2, 1);
    let mut b = a.clone();
    b.stop_tol = 1e-4;
    assert_ne!(a.fingerprint(), b.fingerprint());
    assert_eq!(a.fingerprint(), a.clone().fingerprint());
}
