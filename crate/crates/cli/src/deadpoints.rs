//! Dead-points files.
//!
//! One CSV row per particle: dead points in death order, then the final live
//! points of a run closed with a remainder estimate (`n_active` 0). Floats
//! carry 17 significant digits so a file reads back to the same bits;
//! `log 0` is written as `-inf`. Insertion indexes are empty for prior draws.

use std::fmt::Write as _;
use std::path::Path;

use nestkit::{DeadPoint, LogValue, Particle, RunTrace};

use crate::error::CliError;

pub const FILE_NAME: &str = "dead_points.csv";

const COLUMNS: [&str; 5] = [
    "order",
    "log_like",
    "birth_log_like",
    "n_active",
    "insertion_index",
];

fn push_row(out: &mut String, order: usize, p: &Particle, n_active: usize, index: Option<usize>) {
    let index = index.map_or(String::new(), |i| i.to_string());
    write!(
        out,
        "{order},{:.16e},{:.16e},{n_active},{index}",
        p.log_like.ln(),
        p.birth_log_like.ln()
    )
    .unwrap();
    for t in &p.theta {
        write!(out, ",{t:.16e}").unwrap();
    }
    out.push('\n');
}

pub fn render(trace: &RunTrace) -> String {
    let d = trace.particles().next().map_or(0, |p| p.theta.len());
    let mut out = COLUMNS.join(",");
    for k in 0..d {
        write!(out, ",theta_{k}").unwrap();
    }
    out.push('\n');
    for dp in &trace.dead {
        push_row(&mut out, dp.order, &dp.particle, dp.n_active, dp.insertion_index);
    }
    let indexes = trace.recomputed_insertion_indexes();
    let mut finals: Vec<(&Particle, Option<usize>)> = trace
        .final_live
        .iter()
        .zip(indexes[trace.dead.len()..].iter().copied())
        .collect();
    finals.sort_by(|a, b| a.0.death_order(b.0));
    let next = trace.dead.last().map_or(0, |d| d.order + 1);
    for (k, (p, i)) in finals.into_iter().enumerate() {
        push_row(&mut out, next + k, p, 0, i);
    }
    out
}

pub fn write(trace: &RunTrace, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, render(trace)).map_err(CliError::io(path))
}

/// Reads a dead-points file back into a trace. Particle ids are the row
/// numbers, which keeps the tie order of equal likelihoods.
pub fn parse(text: &str, path: &Path) -> Result<RunTrace, CliError> {
    let err = |line: usize, msg: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header row".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < COLUMNS.len() || cols[..COLUMNS.len()] != COLUMNS {
        return Err(err(1, format!("header must start with {}", COLUMNS.join(","))));
    }
    for (k, c) in cols[COLUMNS.len()..].iter().enumerate() {
        if *c != format!("theta_{k}") {
            return Err(err(1, format!("expected column theta_{k}, found `{c}`")));
        }
    }
    let mut dead: Vec<DeadPoint> = Vec::new();
    let mut final_live: Vec<Particle> = Vec::new();
    let mut stored_index: Vec<(usize, Option<usize>)> = Vec::new();
    for (line, row) in lines {
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != cols.len() {
            return Err(err(
                line,
                format!("{} fields, expected {}", fields.len(), cols.len()),
            ));
        }
        let int = |k: usize| {
            fields[k]
                .parse::<usize>()
                .map_err(|e| err(line, format!("{}: {e}", COLUMNS[k])))
        };
        let float = |k: usize, name: &str| {
            let v = fields[k]
                .parse::<f64>()
                .map_err(|e| err(line, format!("{name}: {e}")))?;
            if v.is_nan() {
                return Err(err(line, format!("{name} is NaN")));
            }
            Ok(v)
        };
        let order = int(0)?;
        let log_like = float(1, "log_like")?;
        let birth = float(2, "birth_log_like")?;
        let n_active = int(3)?;
        let index = if fields[4].is_empty() { None } else { Some(int(4)?) };
        let theta = (COLUMNS.len()..cols.len())
            .map(|k| float(k, cols[k]))
            .collect::<Result<Vec<f64>, _>>()?;
        let particle = Particle {
            u: Vec::new(),
            theta,
            log_like: LogValue::from_ln(log_like),
            birth_log_like: LogValue::from_ln(birth),
            id: (line - 2) as u64,
        };
        stored_index.push((line, index));
        if n_active == 0 {
            final_live.push(particle);
        } else if !final_live.is_empty() {
            return Err(err(line, "dead point after the final live points".into()));
        } else {
            dead.push(DeadPoint {
                particle,
                order,
                n_active,
                insertion_index: index,
            });
        }
    }
    let trace = RunTrace {
        dead,
        final_live,
        ..Default::default()
    };
    if trace.is_empty() {
        return Err(CliError::Corrupt {
            path: path.to_path_buf(),
            msg: "empty trace".into(),
        });
    }
    for (k, (d, n)) in trace.dead.iter().zip(trace.recomputed_n_active()).enumerate() {
        if d.n_active != n {
            return Err(err(
                stored_index[k].0,
                format!("n_active {} but birth/death contours give {n}", d.n_active),
            ));
        }
    }
    for ((line, stored), derived) in stored_index.iter().zip(trace.recomputed_insertion_indexes()) {
        if *stored != derived {
            return Err(err(
                *line,
                format!("insertion_index {stored:?} but birth/death contours give {derived:?}"),
            ));
        }
    }
    trace.validate().map_err(|e| CliError::Corrupt {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(trace)
}

pub fn read(path: &Path) -> Result<RunTrace, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    parse(&text, path)
}
