//! Benchmark integrands with analytic or brute-force reference values.
//!
//! Standard-suite parameterizations (fixed here, checked by quadrature):
//!
//! | problem    | prior          | log-likelihood                                               |
//! |------------|----------------|--------------------------------------------------------------|
//! | eggbox     | U[0, 10π]²     | `(2 + cos(x/2)·cos(y/2))^5`                                  |
//! | rosenbrock | U[-5, 5]²      | `-((1 - x)² + 100·(y - x²)²)`                                |
//! | shells     | U[-6, 6]²      | `log Σ_k N(|θ - c_k| - 2; 0, 0.1²)`, `c_k = (±3.5, 0)`       |
//!
//! Their reference log-evidences come from trapezoidal quadrature on a
//! 4096 × 4096 interval grid over the unit square, cross-checked against a
//! 2048 × 2048 grid (relative change of Z must stay below 1e-4).

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use statrs::function::erf::erf;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::logvalue::{log_sum_f64, LogValue};
use crate::priors::PriorTransform;

pub type LogLikeFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VolumeFn = Arc<dyn Fn(f64) -> Option<f64> + Send + Sync>;
pub type PartitionFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// How a quadrature reference value was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureRecord {
    pub intervals: usize,
    pub coarse_intervals: usize,
    /// |Z_fine / Z_coarse - 1|.
    pub relative_change: f64,
}

#[derive(Clone, Default)]
pub struct Oracle {
    pub log_z: Option<f64>,
    /// Prior-to-posterior KL divergence in nats.
    pub kl: Option<f64>,
    /// Enclosed prior volume X(λ) for a log-likelihood threshold λ.
    pub volume: Option<VolumeFn>,
    /// log Z(β) for the tempered integrand L^β.
    pub log_partition: Option<PartitionFn>,
    pub quadrature: Option<QuadratureRecord>,
}

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    /// Parameters rendered for fingerprints and manifests.
    pub parameters: String,
    pub prior: PriorTransform,
    log_like: LogLikeFn,
    pub oracle: Oracle,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("parameters", &self.parameters)
            .field("dim", &self.dim())
            .finish()
    }
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        parameters: impl Into<String>,
        prior: PriorTransform,
        log_like: LogLikeFn,
    ) -> Self {
        Problem {
            name: name.into(),
            parameters: parameters.into(),
            prior,
            log_like,
            oracle: Oracle::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn log_like(&self, theta: &[f64]) -> LogValue {
        let v = (self.log_like)(theta);
        if v.is_nan() {
            LogValue::ZERO
        } else {
            LogValue::from_ln(v)
        }
    }

    /// Transforms unit coordinates and evaluates the likelihood there.
    pub fn evaluate(&self, u: &[f64]) -> Result<(Vec<f64>, LogValue)> {
        let theta = self.prior.transform(u)?;
        let l = self.log_like(&theta);
        Ok((theta, l))
    }

    pub fn fingerprint(&self) -> String {
        format!("{}({})[{}]", self.name, self.parameters, self.prior.fingerprint())
    }
}

/// Uniform prior on [-a, a]^d with log L = -|θ|².
pub fn truncated_gaussian(a: f64, d: usize) -> Result<Problem> {
    if !(a >= 1.0) || d == 0 {
        return Err(Error::InputDomain(format!(
            "truncated_gaussian needs a >= 1 and d >= 1, got a={a}, d={d}"
        )));
    }
    let prior = PriorTransform::uniform_cube(-a, a, d)?;
    let ll: LogLikeFn = Arc::new(|t: &[f64]| -t.iter().map(|x| x * x).sum::<f64>());
    let mut p = Problem::new("truncated_gaussian", format!("a={a},d={d}"), prior, ll);
    let (log_z, kl) = gaussian_box_oracle(1.0, a, d);
    p.oracle.log_z = Some(log_z);
    p.oracle.kl = Some(kl);
    p.oracle.log_partition = Some(Arc::new(move |beta| gaussian_box_oracle(beta, a, d).0));
    Ok(p)
}

/// log Z and KL divergence for L = exp(-β|θ|²) under U[-a, a]^d, using the
/// error function so the values stay exact for small a or β.
fn gaussian_box_oracle(beta: f64, a: f64, d: usize) -> (f64, f64) {
    let df = d as f64;
    if beta == 0.0 {
        return (0.0, 0.0);
    }
    let s = beta.sqrt();
    // ∫_{-a}^{a} exp(-β x²) dx / (2a)
    let z1 = PI.sqrt() * erf(a * s) / (s * 2.0 * a);
    // E[β x²] under the truncated posterior
    let m2 = 0.5 - a * s * (-beta * a * a).exp() / (PI.sqrt() * erf(a * s));
    let log_z = df * z1.ln();
    (log_z, -df * m2 - log_z)
}

fn unit_ball_log_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * PI.ln() - ln_gamma(h + 1.0)
}

/// Uniform prior on [-1, 1]^d with log L = -r²; the enclosed volume is
/// known in closed form inside the inscribed ball (and everywhere for d = 2).
pub fn cone_volume_problem(d: usize) -> Result<Problem> {
    if d == 0 {
        return Err(Error::InputDomain("cone_volume_problem needs d >= 1".into()));
    }
    let prior = PriorTransform::uniform_cube(-1.0, 1.0, d)?;
    let ll: LogLikeFn = Arc::new(|t: &[f64]| -t.iter().map(|x| x * x).sum::<f64>());
    let mut p = Problem::new("cone_volume", format!("d={d}"), prior, ll);
    let (log_z, kl) = gaussian_box_oracle(1.0, 1.0, d);
    p.oracle.log_z = Some(log_z);
    p.oracle.kl = Some(kl);
    p.oracle.volume = Some(Arc::new(move |lambda| cone_volume(lambda, d)));
    Ok(p)
}

/// Fraction of [-1, 1]^d with -r² > λ.
pub fn cone_volume(lambda: f64, d: usize) -> Option<f64> {
    if lambda == f64::NEG_INFINITY {
        return Some(1.0);
    }
    if lambda >= 0.0 {
        return Some(0.0);
    }
    let r2 = -lambda;
    let r = r2.sqrt();
    let df = d as f64;
    if r <= 1.0 {
        return Some((unit_ball_log_volume(d) + df * r.ln() - df * 2f64.ln()).exp());
    }
    if r2 >= df {
        return Some(1.0);
    }
    if d == 2 {
        // Disc of radius r clipped by the square's four sides.
        let segment = r2 * (1.0 / r).acos() - (r2 - 1.0).sqrt();
        return Some((PI * r2 - 4.0 * segment) / 4.0);
    }
    None
}

/// One-dimensional piecewise-constant likelihood on U[0, 1]: level k has
/// log-likelihood `levels[k].0` on a contiguous interval of prior mass
/// `levels[k].1`.
pub fn plateau_problem(levels: &[(f64, f64)]) -> Result<Problem> {
    if levels.is_empty() {
        return Err(Error::InputDomain(
            "plateau_problem needs at least one level".into(),
        ));
    }
    if levels.iter().any(|&(l, f)| !(f > 0.0) || l.is_nan()) {
        return Err(Error::InputDomain("plateau fractions must be positive".into()));
    }
    let total: f64 = levels.iter().map(|l| l.1).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InputDomain(format!(
            "plateau fractions sum to {total}, not 1"
        )));
    }
    if levels.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::InputDomain(
            "plateau log-likelihoods must be strictly increasing".into(),
        ));
    }
    let mut edges = Vec::with_capacity(levels.len());
    let mut acc = 0.0;
    for &(_, f) in levels {
        acc += f;
        edges.push(acc);
    }
    let values: Vec<f64> = levels.iter().map(|l| l.0).collect();
    let ll: LogLikeFn = {
        let edges = edges.clone();
        let values = values.clone();
        Arc::new(move |t: &[f64]| {
            let k = edges.partition_point(|&e| e <= t[0]).min(values.len() - 1);
            values[k]
        })
    };
    let desc: Vec<String> = levels.iter().map(|(l, f)| format!("({l},{f})")).collect();
    let prior = PriorTransform::uniform_cube(0.0, 1.0, 1)?;
    let mut p = Problem::new("plateau", desc.join(""), prior, ll);
    let log_z = log_sum_f64(levels.iter().map(|&(l, f)| l + f.ln()));
    p.oracle.log_z = Some(log_z);
    p.oracle.kl = Some(
        levels
            .iter()
            .map(|&(l, f)| {
                let post = (l + f.ln() - log_z).exp();
                if post > 0.0 {
                    post * (l - log_z)
                } else {
                    0.0
                }
            })
            .sum(),
    );
    let owned: Vec<(f64, f64)> = levels.to_vec();
    p.oracle.volume = Some(Arc::new(move |lambda| {
        Some(owned.iter().filter(|l| l.0 > lambda).map(|l| l.1).sum())
    }));
    let owned: Vec<(f64, f64)> = levels.to_vec();
    p.oracle.log_partition = Some(Arc::new(move |beta| {
        log_sum_f64(
            owned
                .iter()
                .map(|&(l, f)| LogValue::from_ln(l).powf(beta).ln() + f.ln()),
        )
    }));
    Ok(p)
}

/// Uniform prior on [-a, a]^d with energy E = |θ|²/2 and log L = -E.
pub fn harmonic_energy(a: f64, d: usize) -> Result<Problem> {
    if !(a > 0.0) || d == 0 {
        return Err(Error::InputDomain(format!(
            "harmonic_energy needs a > 0 and d >= 1, got a={a}, d={d}"
        )));
    }
    let prior = PriorTransform::uniform_cube(-a, a, d)?;
    let ll: LogLikeFn = Arc::new(|t: &[f64]| -0.5 * t.iter().map(|x| x * x).sum::<f64>());
    let mut p = Problem::new("harmonic_energy", format!("a={a},d={d}"), prior, ll);
    let (log_z, kl) = gaussian_box_oracle(0.5, a, d);
    p.oracle.log_z = Some(log_z);
    p.oracle.kl = Some(kl);
    p.oracle.log_partition = Some(Arc::new(move |beta| gaussian_box_oracle(0.5 * beta, a, d).0));
    Ok(p)
}

/// Energy convention shared with the thermodynamic estimators: E = -log L.
pub fn energy(log_like: LogValue) -> f64 {
    -log_like.ln()
}

pub fn eggbox() -> Problem {
    let prior = PriorTransform::uniform_cube(0.0, 10.0 * PI, 2).expect("valid bounds");
    let ll: LogLikeFn = Arc::new(|t: &[f64]| (2.0 + (t[0] / 2.0).cos() * (t[1] / 2.0).cos()).powi(5));
    let mut p = Problem::new("eggbox", "d=2", prior, ll);
    attach_quadrature(&mut p, &EGGBOX_ORACLE);
    p
}

pub fn rosenbrock() -> Problem {
    let prior = PriorTransform::uniform_cube(-5.0, 5.0, 2).expect("valid bounds");
    let ll: LogLikeFn = Arc::new(|t: &[f64]| {
        let (x, y) = (t[0], t[1]);
        -((1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2))
    });
    let mut p = Problem::new("rosenbrock", "d=2", prior, ll);
    attach_quadrature(&mut p, &ROSENBROCK_ORACLE);
    p
}

pub const SHELL_RADIUS: f64 = 2.0;
pub const SHELL_WIDTH: f64 = 0.1;
pub const SHELL_CENTERS: [[f64; 2]; 2] = [[-3.5, 0.0], [3.5, 0.0]];

pub fn gaussian_shells() -> Problem {
    let prior = PriorTransform::uniform_cube(-6.0, 6.0, 2).expect("valid bounds");
    let ll: LogLikeFn = Arc::new(|t: &[f64]| {
        let norm = -0.5 * (2.0 * PI * SHELL_WIDTH * SHELL_WIDTH).ln();
        let terms = SHELL_CENTERS.iter().map(|c| {
            let r = ((t[0] - c[0]).powi(2) + (t[1] - c[1]).powi(2)).sqrt();
            norm - (r - SHELL_RADIUS).powi(2) / (2.0 * SHELL_WIDTH * SHELL_WIDTH)
        });
        log_sum_f64(terms)
    });
    let mut p = Problem::new("gaussian_shells", "d=2", prior, ll);
    attach_quadrature(&mut p, &SHELLS_ORACLE);
    p.oracle.volume = Some(Arc::new(shells_volume));
    p
}

/// Prior volume above λ on the shells while the two annuli are thin enough
/// to be disjoint and inside the box: each has half-width
/// δ = w·√(2(norm − λ)) and area 8πδ out of 144.
pub fn shells_volume(lambda: f64) -> Option<f64> {
    let norm = -0.5 * (2.0 * PI * SHELL_WIDTH * SHELL_WIDTH).ln();
    if lambda >= norm {
        return Some(0.0);
    }
    let delta = SHELL_WIDTH * (2.0 * (norm - lambda)).sqrt();
    (delta <= 0.5).then(|| PI * delta / 9.0)
}

/// Eggbox, Rosenbrock and Gaussian shells, each with a quadrature log Z.
pub fn standard_suite() -> Vec<Problem> {
    vec![eggbox(), rosenbrock(), gaussian_shells()]
}

pub const QUADRATURE_INTERVALS: usize = 4096;
pub const QUADRATURE_COARSE_INTERVALS: usize = 2048;
pub const QUADRATURE_MAX_RELATIVE_CHANGE: f64 = 1e-4;

static EGGBOX_ORACLE: OnceLock<(f64, QuadratureRecord)> = OnceLock::new();
static ROSENBROCK_ORACLE: OnceLock<(f64, QuadratureRecord)> = OnceLock::new();
static SHELLS_ORACLE: OnceLock<(f64, QuadratureRecord)> = OnceLock::new();

fn attach_quadrature(p: &mut Problem, cell: &'static OnceLock<(f64, QuadratureRecord)>) {
    let probe = p.clone();
    let &(log_z, record) = cell.get_or_init(move || {
        let fine = log_z_quadrature_2d(&probe, QUADRATURE_INTERVALS);
        let coarse = log_z_quadrature_2d(&probe, QUADRATURE_COARSE_INTERVALS);
        let record = QuadratureRecord {
            intervals: QUADRATURE_INTERVALS,
            coarse_intervals: QUADRATURE_COARSE_INTERVALS,
            relative_change: (fine - coarse).exp_m1().abs(),
        };
        (fine, record)
    });
    p.oracle.log_z = Some(log_z);
    p.oracle.quadrature = Some(record);
}

/// log of the trapezoidal estimate of ∫ L(T(u)) du over the unit square with
/// `intervals` intervals per side.
pub fn log_z_quadrature_2d(problem: &Problem, intervals: usize) -> f64 {
    assert_eq!(
        problem.dim(),
        2,
        "2-D quadrature on a {}-D problem",
        problem.dim()
    );
    let h = 1.0 / intervals as f64;
    let weight = |i: usize| -> f64 {
        if i == 0 || i == intervals {
            0.5
        } else {
            1.0
        }
    };
    let rows: Vec<f64> = (0..=intervals)
        .into_par_iter()
        .map(|i| {
            let u0 = i as f64 * h;
            let terms: Vec<f64> = (0..=intervals)
                .map(|j| {
                    let u = [u0, j as f64 * h];
                    let (_, l) = problem.evaluate(&u).expect("grid inside the hypercube");
                    l.ln() + weight(j).ln()
                })
                .collect();
            log_sum_f64(terms) + weight(i).ln()
        })
        .collect();
    log_sum_f64(rows) + 2.0 * h.ln()
}
