//! Run configuration files.
//!
//! ```toml
//! nlive = 1000
//! tol = 1e-3
//! seed = 67
//! workers = 1
//! output_dir = "runs/gaussian"
//! finalize = "kill"          # or "remainder"
//!
//! [problem]
//! name = "truncated_gaussian"
//! a = 5.0
//! d = 2
//!
//! [sampler]
//! kind = "slice"
//! steps = 5
//! ```
//!
//! Every key that is not part of the schema is rejected, all of them listed
//! in one error. A run manifest is also accepted: its `[config]` table holds
//! the fully resolved configuration of the run that wrote it.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nestkit::engine::{Finalize, RunConfig};
use nestkit::problems::{self, Problem};
use nestkit::samplers::{SamplerConfig, SamplerKind};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

const TOP_KEYS: &[&str] = &[
    "nlive",
    "tol",
    "seed",
    "workers",
    "output_dir",
    "finalize",
    "max_iterations",
    "problem",
    "sampler",
];
const SAMPLER_KEYS: &[&str] = &[
    "kind",
    "steps",
    "enlargement",
    "max_clusters",
    "max_calls",
    "step_scale",
    "target_accept",
];
const ANY_PROBLEM_KEYS: &[&str] = &["name", "a", "d", "levels"];

pub const PROBLEM_NAMES: &[&str] = &[
    "truncated_gaussian",
    "harmonic_energy",
    "cone",
    "plateau",
    "eggbox",
    "rosenbrock",
    "gaussian_shells",
];

fn problem_keys(name: &str) -> Option<&'static [&'static str]> {
    Some(match name {
        "truncated_gaussian" | "harmonic_energy" => &["name", "a", "d"],
        "cone" => &["name", "d"],
        "plateau" => &["name", "levels"],
        "eggbox" | "rosenbrock" | "gaussian_shells" => &["name"],
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalizeName {
    #[default]
    Kill,
    Remainder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemTable {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// `[log_like, prior_mass]` per level, lowest first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerTable {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enlargement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_clusters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_calls: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_accept: Option<f64>,
}

fn default_tol() -> f64 {
    1e-3
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub nlive: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub finalize: FinalizeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<u64>,
    pub problem: ProblemTable,
    pub sampler: SamplerTable,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
}

pub struct Resolved {
    /// The configuration with every default written out.
    pub file: RunFile,
    pub problem: Problem,
    pub config: RunConfig,
    pub output_dir: PathBuf,
}

/// Provenance written next to the outputs. Its `[config]` table alone
/// reproduces the dead-points file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run: RunRecord,
    pub config: RunFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub n_like_calls: u64,
    pub truncated: bool,
    pub problem_fingerprint: String,
    pub config_fingerprint: String,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn extra_keys(table: &Table, allowed: &[&str], prefix: &str) -> Vec<String> {
    table
        .keys()
        .filter(|k| !allowed.contains(&k.as_str()))
        .map(|k| format!("{prefix}{k}"))
        .collect()
}

/// Keys outside the schema, dotted for nested tables.
pub fn unknown_keys(table: &Table) -> Vec<String> {
    let mut out = extra_keys(table, TOP_KEYS, "");
    if let Some(Value::Table(s)) = table.get("sampler") {
        out.extend(extra_keys(s, SAMPLER_KEYS, "sampler."));
    }
    if let Some(Value::Table(p)) = table.get("problem") {
        let allowed = p
            .get("name")
            .and_then(Value::as_str)
            .and_then(problem_keys)
            .unwrap_or(ANY_PROBLEM_KEYS);
        out.extend(extra_keys(p, allowed, "problem."));
    }
    out
}

pub fn parse(text: &str) -> Result<RunFile, CliError> {
    let mut table: Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if let (Some(Value::Table(config)), Some(Value::Table(_))) = (table.get("config"), table.get("run")) {
        table = config.clone();
    }
    let unknown = unknown_keys(&table);
    if !unknown.is_empty() {
        return Err(CliError::UnknownKeys(unknown));
    }
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
}

pub fn load(path: &Path) -> Result<RunFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    parse(&text)
}

pub fn build_problem(table: &ProblemTable) -> Result<Problem, CliError> {
    let need = |v: Option<f64>, key: &str| {
        v.ok_or_else(|| CliError::Config(format!("problem {} needs `{key}`", table.name)))
    };
    let need_d = || {
        table
            .d
            .ok_or_else(|| CliError::Config(format!("problem {} needs `d`", table.name)))
    };
    Ok(match table.name.as_str() {
        "truncated_gaussian" => problems::truncated_gaussian(need(table.a, "a")?, need_d()?)?,
        "harmonic_energy" => problems::harmonic_energy(need(table.a, "a")?, need_d()?)?,
        "cone" => problems::cone_volume_problem(need_d()?)?,
        "plateau" => {
            let levels = table
                .levels
                .as_ref()
                .ok_or_else(|| CliError::Config("problem plateau needs `levels`".into()))?;
            let levels: Vec<(f64, f64)> = levels.iter().map(|l| (l[0], l[1])).collect();
            problems::plateau_problem(&levels)?
        }
        "eggbox" => problems::eggbox(),
        "rosenbrock" => problems::rosenbrock(),
        "gaussian_shells" => problems::gaussian_shells(),
        other => {
            return Err(CliError::Config(format!(
                "unknown problem `{other}`; expected one of {}",
                PROBLEM_NAMES.join(", ")
            )))
        }
    })
}

fn sampler_config(table: &SamplerTable, d: usize) -> Result<SamplerConfig, CliError> {
    let kind = SamplerKind::parse(&table.kind).ok_or_else(|| {
        CliError::Config(format!(
            "unknown sampler `{}`; expected rejection, ellipsoid, multi_ellipsoid, random_walk or slice",
            table.kind
        ))
    })?;
    let mut s = SamplerConfig::new(kind, d);
    if let Some(v) = table.steps {
        s.steps = v;
    }
    if let Some(v) = table.enlargement {
        s.enlargement = v;
    }
    if let Some(v) = table.max_clusters {
        s.max_clusters = v;
    }
    if let Some(v) = table.max_calls {
        s.max_calls = v;
    }
    if let Some(v) = table.step_scale {
        s.step_scale = v;
    }
    if let Some(v) = table.target_accept {
        s.target_accept = v;
    }
    Ok(s)
}

/// Applies overrides and defaults, builds the problem and validates the
/// run configuration against it.
pub fn resolve(mut file: RunFile, overrides: &Overrides) -> Result<Resolved, CliError> {
    if let Some(seed) = overrides.seed {
        file.seed = Some(seed);
    }
    if let Some(w) = overrides.workers {
        file.workers = w;
    }
    if let Some(out) = &overrides.output {
        file.output_dir = Some(out.clone());
    }
    let seed = file
        .seed
        .ok_or_else(|| CliError::Config("no seed: set `seed` or pass --seed".into()))?;
    let output_dir = file
        .output_dir
        .clone()
        .ok_or_else(|| CliError::Config("no output directory: set `output_dir` or pass --output".into()))?;
    let problem = build_problem(&file.problem)?;
    let d = problem.dim();
    let sampler = sampler_config(&file.sampler, d)?;
    let mut config = RunConfig::new(file.nlive, sampler.clone());
    config.max_iterations = file.max_iterations;
    config.stop_tol = file.tol;
    config.seed = seed;
    config.workers = file.workers;
    config.max_iterations = Some(config.max_iterations_for(d));
    config.finalize = match file.finalize {
        FinalizeName::Kill => Finalize::KillOneByOne,
        FinalizeName::Remainder => Finalize::RemainderEstimate,
    };
    config.validate(d)?;
    file.sampler = SamplerTable {
        kind: sampler.kind.name().into(),
        steps: Some(sampler.steps),
        enlargement: Some(sampler.enlargement),
        max_clusters: Some(sampler.max_clusters),
        max_calls: Some(sampler.max_calls),
        step_scale: Some(sampler.step_scale),
        target_accept: Some(sampler.target_accept),
    };
    file.max_iterations = config.max_iterations;
    Ok(Resolved {
        file,
        problem,
        config,
        output_dir,
    })
}
