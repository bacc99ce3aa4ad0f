//! Nested sampling for Bayesian evidences, posterior samples and
//! partition functions.
//!
//! A run produces a [`trace::RunTrace`]: every dead point with its birth and
//! death contours. Volumes, evidences, weights, error bars and diagnostics are
//! all computed afterwards from that record.
//!
//! ```no_run
//! use nestkit::engine::{run, RunConfig};
//! use nestkit::estimators::{evidence_report, VolumeMethod};
//! use nestkit::problems::truncated_gaussian;
//! use nestkit::samplers::{SamplerConfig, SamplerKind};
//!
//! let problem = truncated_gaussian(5.0, 2).unwrap();
//! let mut config = RunConfig::new(1000, SamplerConfig::new(SamplerKind::Slice, 2));
//! config.seed = 67;
//! let trace = run(&problem, &config).unwrap();
//! let report = evidence_report(&trace, &VolumeMethod::MeanLog, 1000, 71).unwrap();
//! println!("log Z = {} ± {}", report.log_z.ln(), report.sigma_log_z);
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod logvalue;
pub mod priors;
pub mod problems;
pub mod rng;
pub mod samplers;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
pub use logvalue::{log_add, log_sum, LogValue};
pub use trace::{DeadPoint, Particle, RunTrace};
