//! Error-versus-sample-size sweeps for a tail probability of the filter.

use std::collections::BTreeMap;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use srnfilter_core::filters::{run_filter, run_reference, tail_probability, FilterConfig, FilterError, Method};
use srnfilter_core::model::{InitialDistribution, SrnModel, StatePartition};
use srnfilter_core::ssa::ObservedPath;

/// `P(X_species(T) >= threshold | path)` for one interest species.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailQoi {
    /// Position among the interest species.
    pub coord: usize,
    pub threshold: i64,
    pub label: String,
}

impl TailQoi {
    /// Parses `tail:<name>>=<n>`, where `<name>` is a species name or `Z<i>`
    /// (1-based species index).
    pub fn parse(s: &str, model: &SrnModel, partition: &StatePartition) -> Result<Self> {
        let body = s.strip_prefix("tail:").context("QOI must look like tail:NAME>=N")?;
        let (name, thr) = body.split_once(">=").context("QOI must look like tail:NAME>=N")?;
        let threshold = i64::from_str(thr.trim()).with_context(|| format!("bad threshold `{thr}`"))?;
        let name = name.trim();
        let species = match model.species_index(name) {
            Some(i) => i,
            None => match name.strip_prefix('Z').and_then(|n| n.parse::<usize>().ok()) {
                Some(i) if i >= 1 && i <= model.species_count() => i - 1,
                _ => bail!("unknown species `{name}`"),
            },
        };
        let coord = partition
            .interest()
            .iter()
            .position(|&i| i == species)
            .with_context(|| format!("`{name}` is not an interest species"))?;
        Ok(TailQoi {
            coord,
            threshold,
            label: s.to_string(),
        })
    }

    pub fn eval(&self, r: &srnfilter_core::filters::FilterResult) -> f64 {
        tail_probability(&r.space, r.final_pmf(), self.coord, self.threshold)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub method: Method,
    pub m: usize,
    pub reps: usize,
    pub mean_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Runs that aborted (for example a degenerate ensemble).
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub qoi: TailQoi,
    pub reference: f64,
    pub rows: Vec<Row>,
    /// Least-squares slope of `ln(mean_error)` against `ln(M)` per method.
    pub slopes: BTreeMap<String, f64>,
}

/// Seed of repetition `rep`, kept apart from the path seed.
pub fn rep_seed(base: u64, rep: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(rep as u64 + 1)
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::FullFfsp => "ffsp",
        Method::Pf => "pf",
        Method::Ump => "ump",
        Method::Cmp => "cmp",
    }
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn slope_of(rows: &[Row], method: Method) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.method == method && r.mean_error > 0.0)
        .map(|r| ((r.m as f64).ln(), r.mean_error.ln()))
        .unzip();
    (x.len() >= 2).then(|| ls_slope(&x, &y))
}

/// Relative errors of `methods` against the full FFSP value, for every
/// `M` in `ms` and `reps` seeds. `base` supplies dt, bounds and the seed
/// from which repetition seeds are derived.
#[allow(clippy::too_many_arguments)]
pub fn run_convergence(
    model: &SrnModel,
    partition: &StatePartition,
    mu: &InitialDistribution,
    path: &ObservedPath,
    base: &FilterConfig,
    qoi: &TailQoi,
    methods: &[Method],
    ms: &[usize],
    reps: usize,
) -> Result<Report> {
    if reps == 0 || ms.is_empty() {
        bail!("need at least one M and one repetition");
    }
    let reference_cfg = FilterConfig {
        method: Method::FullFfsp,
        ..base.clone()
    };
    let reference = qoi.eval(&run_reference(model, partition, mu, path, &reference_cfg)?);
    if !(reference > 0.0) {
        bail!("reference tail probability is {reference}; relative errors are undefined");
    }
    let jobs: Vec<(Method, usize, usize)> = methods
        .iter()
        .flat_map(|&me| ms.iter().flat_map(move |&m| (0..reps).map(move |r| (me, m, r))))
        .collect();
    let outcomes: Vec<Result<f64, FilterError>> = jobs
        .par_iter()
        .map(|&(method, m, r)| {
            let cfg = FilterConfig {
                method,
                m,
                seed: rep_seed(base.seed, r),
                ..base.clone()
            };
            run_filter(model, partition, mu, path, &cfg).map(|res| (qoi.eval(&res) - reference).abs() / reference)
        })
        .collect();

    let mut rows = Vec::new();
    for (chunk, job) in outcomes.chunks(reps).zip(jobs.chunks(reps)) {
        let (method, m, _) = job[0];
        let mut errs = Vec::new();
        let mut failures = 0;
        for o in chunk {
            match o {
                Ok(e) => errs.push(*e),
                Err(e) if e.is_degenerate() => failures += 1,
                Err(e) => return Err(anyhow::anyhow!("{}", e)).context(format!("{} M={m}", method_name(method))),
            }
        }
        let n = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / n;
        let sd = if errs.len() > 1 {
            (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let half = 1.96 * sd / n.sqrt();
        rows.push(Row {
            method,
            m,
            reps: errs.len(),
            mean_error: mean,
            ci_low: mean - half,
            ci_high: mean + half,
            failures,
        });
    }
    let slopes = methods
        .iter()
        .filter_map(|&me| slope_of(&rows, me).map(|s| (method_name(me).to_string(), s)))
        .collect();
    Ok(Report {
        qoi: qoi.clone(),
        reference,
        rows,
        slopes,
    })
}

pub fn write_rows(path: &std::path::Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["method", "M", "reps", "mean_error", "ci_low", "ci_high", "failures"])?;
    for r in rows {
        w.write_record([
            method_name(r.method).to_string(),
            r.m.to_string(),
            r.reps.to_string(),
            r.mean_error.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
