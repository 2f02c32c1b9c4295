//! End-to-end filters producing the conditional law of the interest species.
//!
//! - [`Method::FullFfsp`]: FFSP on the full hidden box, marginalized.
//! - [`Method::Pf`]: particle filter on the full model.
//! - [`Method::Ump`]: FFSP on the projected network with unconditional
//!   tables estimated up front from plain SSA runs.
//! - [`Method::Cmp`]: FFSP on the projected network with conditional tables
//!   estimated interval by interval from a live particle ensemble.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ffsp::{
    enumerate_space, ffsp_filter_on_grid, initial_pmf, moments, FfspError, FilterSolver, Pmf,
    Snapshot, TruncatedSpace, UnnormalizedPmf, DEFAULT_SIZE_CAP,
};
use crate::grid::TimeGrid;
use crate::model::{InitialDistribution, ModelError, SrnModel, StatePartition};
use crate::network::{CoordinateSplit, TimePoint};
use crate::particle::{
    pf_ess, pf_estimate_dense, pf_init, pf_jump, pf_propagate, pf_resample, pf_resample_if_degenerate, pf_run, EnsembleView,
    PfConfig, PfError, Resampling,
};
use crate::projection::{
    build_projected_model, cmp_slice, table_reactions, ump_estimate, Interpolation,
    ProjectedModel, ProjectionError, PropensityTable, TableKey, UmpDomain,
};
use crate::ssa::ObservedPath;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error(transparent)]
    Ffsp(#[from] FfspError),
    #[error(transparent)]
    Pf(#[from] PfError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Input(String),
}

impl FilterError {
    /// True when the filter lost all mass: every particle died, or the
    /// truncated distribution vanished.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            FilterError::Pf(PfError::Degenerate { .. }) | FilterError::Ffsp(FfspError::ZeroMass { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[serde(rename = "ffsp")]
    FullFfsp,
    Pf,
    Ump,
    Cmp,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ffsp" | "full" => Ok(Method::FullFfsp),
            "pf" => Ok(Method::Pf),
            "ump" => Ok(Method::Ump),
            "cmp" => Ok(Method::Cmp),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    pub method: Method,
    /// Particles (PF, CMP) or SSA runs (UMP).
    pub m: usize,
    pub dt: f64,
    /// Bounds per hidden species in `partition.hidden()` order; the projected
    /// methods use the leading interest entries.
    pub bounds: Vec<(i64, i64)>,
    pub seed: u64,
    #[serde(default)]
    pub resampling: Resampling,
    #[serde(default)]
    pub interpolation: Interpolation,
    /// Resample between jumps when the ESS falls below this fraction of M.
    #[serde(default)]
    pub ess_threshold: Option<f64>,
    /// Refuse boxes with more states than this.
    #[serde(default = "default_cap")]
    pub size_cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_SIZE_CAP
}

impl FilterConfig {
    pub fn new(method: Method, m: usize, dt: f64, bounds: Vec<(i64, i64)>, seed: u64) -> Self {
        FilterConfig {
            method,
            m,
            dt,
            bounds,
            seed,
            resampling: Resampling::default(),
            interpolation: Interpolation::default(),
            ess_threshold: None,
            size_cap: DEFAULT_SIZE_CAP,
        }
    }

    fn check(&self, partition: &StatePartition) -> Result<(), FilterError> {
        if matches!(self.ess_threshold, Some(f) if !(0.0..=1.0).contains(&f)) {
            return Err(FilterError::Input("ESS threshold must lie in [0, 1]".into()));
        }
        if !(self.dt > 0.0) {
            return Err(FilterError::Input("dt must be positive".into()));
        }
        if self.m == 0 && matches!(self.method, Method::Pf | Method::Ump | Method::Cmp) {
            return Err(FilterError::Input("M must be at least 1".into()));
        }
        let need = match self.method {
            Method::FullFfsp | Method::Pf => partition.hidden().len(),
            Method::Ump | Method::Cmp => partition.interest().len(),
        };
        if self.bounds.len() < need {
            return Err(FilterError::Input(format!(
                "{} bounds given, {need} needed",
                self.bounds.len()
            )));
        }
        Ok(())
    }

    /// Box over the interest species.
    pub fn interest_space(&self, partition: &StatePartition) -> Result<TruncatedSpace, FilterError> {
        Ok(enumerate_space(&self.bounds[..partition.interest().len()], self.size_cap)?)
    }

    /// Box over all hidden species.
    pub fn hidden_space(&self, partition: &StatePartition) -> Result<TruncatedSpace, FilterError> {
        Ok(enumerate_space(&self.bounds[..partition.hidden().len()], self.size_cap)?)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Number of ODE states (0 for the particle filter).
    pub states: usize,
    pub wall_time_s: f64,
    /// Fraction of conditional mass lost through the box boundary.
    pub leak: f64,
    pub log_likelihood: f64,
    /// Effective sample size per emitted node (PF and CMP).
    pub ess: Vec<f64>,
    /// Fraction of table cells filled by the raw estimator.
    pub reliable_fraction: Option<f64>,
    pub carried_slices: usize,
    /// More than half of the table cells had to be extrapolated.
    pub table_gap: bool,
}

/// Conditional PMF of the interest species on the time grid.
#[derive(Debug, Clone)]
pub struct FilterResult {
    pub method: Method,
    pub space: TruncatedSpace,
    pub times: Vec<f64>,
    pub segments: Vec<usize>,
    pub pmfs: Vec<Vec<f64>>,
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
    /// Boundary leak accumulated up to each node (ODE methods).
    pub leak: Vec<f64>,
    pub diagnostics: Diagnostics,
    /// For CMP: the raw particle estimate at the final time from the same
    /// ensemble, over `space`.
    pub particle_final: Option<Vec<f64>>,
}

impl FilterResult {
    fn empty(method: Method, space: TruncatedSpace) -> Self {
        FilterResult {
            method,
            space,
            times: Vec::new(),
            segments: Vec::new(),
            pmfs: Vec::new(),
            mean: Vec::new(),
            var: Vec::new(),
            leak: Vec::new(),
            diagnostics: Diagnostics::default(),
            particle_final: None,
        }
    }

    fn push(&mut self, segment: usize, time: f64, probs: Vec<f64>, leak: f64) {
        let (m, v) = moments(&self.space, &probs);
        self.leak.push(leak);
        self.times.push(time);
        self.segments.push(segment);
        self.pmfs.push(probs);
        self.mean.push(m);
        self.var.push(v);
    }

    pub fn final_pmf(&self) -> &[f64] {
        self.pmfs.last().map_or(&[], |p| p.as_slice())
    }
}

/// Sums a PMF over a box whose leading `dims` coordinates are kept.
pub fn marginalize(space: &TruncatedSpace, probs: &[f64], dims: usize) -> (TruncatedSpace, Vec<f64>) {
    let kept: Vec<usize> = (0..dims).collect();
    let sub = space.project(&kept);
    let inner = space.size() / sub.size();
    let mut out = vec![0.0; sub.size()];
    for (i, &p) in probs.iter().enumerate() {
        out[i / inner] += p;
    }
    let s: f64 = out.iter().sum();
    if s > 0.0 {
        out.iter_mut().for_each(|v| *v /= s);
    }
    (sub, out)
}

/// `P(X'_coord >= threshold)` under `probs` over `space`.
pub fn tail_probability(space: &TruncatedSpace, probs: &[f64], coord: usize, threshold: i64) -> f64 {
    let mut buf = vec![0; space.dim()];
    probs
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            space.state_into(*i, &mut buf);
            buf[coord] >= threshold
        })
        .map(|(_, p)| p)
        .sum()
}

fn full_split(partition: &StatePartition) -> CoordinateSplit {
    CoordinateSplit::new(partition.hidden(), partition.observed().to_vec())
}

fn check_path(path: &ObservedPath, partition: &StatePartition) -> Result<(), FilterError> {
    path.check().map_err(|e| FilterError::Input(e.to_string()))?;
    if path.initial.len() != partition.observed().len() {
        return Err(FilterError::Input("observed path has the wrong dimension".into()));
    }
    Ok(())
}

fn normalized(s: &Snapshot) -> Vec<f64> {
    // a zero-mass snapshot can only occur right before a ZeroMass error
    s.normalized().unwrap_or_else(|_| vec![0.0; s.weights.len()])
}

/// Runs `cfg.method`.
pub fn run_filter(
    model: &SrnModel,
    partition: &StatePartition,
    mu: &InitialDistribution,
    path: &ObservedPath,
    cfg: &FilterConfig,
) -> Result<FilterResult, FilterError> {
    match cfg.method {
        Method::FullFfsp | Method::Pf => run_reference(model, partition, mu, path, cfg),
        Method::Ump => run_ump(model, partition, mu, path, cfg),
        Method::Cmp => run_cmp(model, partition, mu, path, cfg),
    }
}

/// Full-dimensional FFSP (marginalized on the fly) or the plain particle filter.
pub fn run_reference(
    model: &SrnModel,
    partition: &StatePartition,
    mu: &InitialDistribution,
    path: &ObservedPath,
    cfg: &FilterConfig,
) -> Result<FilterResult, FilterError> {
    cfg.check(partition)?;
    check_path(path, partition)?;
    let start = Instant::now();
    let nx = partition.interest().len();
    let grid = TimeGrid::from_jumps(&path.jump_times, path.horizon, cfg.dt, 1);
    let split = full_split(partition);
    let interest = cfg.interest_space(partition)?;
    let mut out = FilterResult::empty(cfg.method, interest.clone());
    match cfg.method {
        Method::FullFfsp => {
            let space = cfg.hidden_space(partition)?;
            let pi0 = initial_pmf(mu, &split.hidden, &space)?;
            let run = ffsp_filter_on_grid(model, &split, &space, path, &pi0, &grid, &mut |s| {
                let (_, marg) = marginalize(&space, s.weights, nx);
                out.push(s.segment, s.time, marg, s.leak);
            })?;
            out.diagnostics.states = space.size();
            out.diagnostics.leak = run.leak;
            out.diagnostics.log_likelihood = run.log_likelihood;
        }
        Method::Pf => {
            let mut ens = pf_init(mu, &split, &path.initial, cfg.m, cfg.seed)?;
            let interest_species = partition.interest().to_vec();
            let mut ess = Vec::new();
            pf_run(
                model,
                &mut ens,
                path,
                &grid,
                PfConfig {
                    resampling: cfg.resampling,
                    ess_threshold: cfg.ess_threshold,
                },
                &mut |v: &EnsembleView| {
                    let p = pf_estimate_dense(v.ensemble, &interest_species, &interest);
                    let s: f64 = p.iter().sum();
                    let p = if s > 0.0 { p.iter().map(|x| x / s).collect() } else { p };
                    out.push(v.segment, v.time, p, 0.0);
                    ess.push(pf_ess(v.ensemble));
                    Ok(())
                },
            )?;
            out.diagnostics.ess = ess;
            out.diagnostics.log_likelihood = ens.log_likelihood();
        }
        _ => return Err(FilterError::Input("run_reference handles ffsp and pf".into())),
    }
    out.diagnostics.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

fn run_projected_ffsp(
    pm: &ProjectedModel,
    interest: &TruncatedSpace,
    mu: &InitialDistribution,
    partition: &StatePartition,
    path: &ObservedPath,
    grid: &TimeGrid,
    out: &mut FilterResult,
) -> Result<(), FilterError> {
    let split = pm.split();
    let pi0 = initial_pmf(mu, partition.interest(), interest)?;
    let run = ffsp_filter_on_grid(pm, &split, interest, path, &pi0, grid, &mut |s| {
        out.push(s.segment, s.time, normalized(s), s.leak);
    })?;
    out.diagnostics.states = interest.size();
    out.diagnostics.leak = run.leak;
    out.diagnostics.log_likelihood = run.log_likelihood;
    Ok(())
}

fn table_stats(tables: &[PropensityTable], d: &mut Diagnostics) {
    if tables.is_empty() {
        return;
    }
    let frac = tables.iter().map(|t| t.reliable_fraction()).sum::<f64>() / tables.len() as f64;
    d.reliable_fraction = Some(frac);
    d.table_gap = frac < 0.5;
    d.carried_slices = tables.iter().map(|t| t.carried_slices()).sum();
}

/// UMP filter: unconditional tables from `cfg.m` SSA runs, then FFSP on the
/// projected network.
pub fn run_ump(
    model: &SrnModel,
    partition: &StatePartition,
    mu: &InitialDistribution,
    path: &ObservedPath,
    cfg: &FilterConfig,
) -> Result<FilterResult, FilterError> {
    cfg.check(partition)?;
    check_path(path, partition)?;
    let start = Instant::now();
    let interest = cfg.interest_space(partition)?;
    let grid = TimeGrid::from_jumps(&path.jump_times, path.horizon, cfg.dt, 1);
    let tables = ump_estimate(
        model,
        partition,
        mu,
        cfg.m,
        &grid,
        UmpDomain::Path {
            interest: &interest,
            path,
        },
        cfg.interpolation,
        cfg.seed,
    )?;
    let pm = build_projected_model(model, partition, tables)?;
    let mut out = FilterResult::empty(Method::Ump, interest.clone());
    run_projected_ffsp(&pm, &interest, mu, partition, path, &grid, &mut out)?;
    table_stats(&pm.tables, &mut out.diagnostics);
    out.diagnostics.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Projected FFSP with externally supplied tables (for example exact ones).
pub fn run_with_tables(
    model: &SrnModel,
    partition: &StatePartition,
    mu: &InitialDistribution,
    path: &ObservedPath,
    cfg: &FilterConfig,
    tables: Vec<PropensityTable>,
) -> Result<FilterResult, FilterError> {
    check_path(path, partition)?;
    let start = Instant::now();
    let interest = cfg.interest_space(partition)?;
    let grid = TimeGrid::from_jumps(&path.jump_times, path.horizon, cfg.dt, 1);
    let pm = build_projected_model(model, partition, tables)?;
    let mut out = FilterResult::empty(cfg.method, interest.clone());
    run_projected_ffsp(&pm, &interest, mu, partition, path, &grid, &mut out)?;
    table_stats(&pm.tables, &mut out.diagnostics);
    out.diagnostics.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

/// CMP filter. On every inter-jump interval the particle ensemble is
/// propagated node by node and the conditional tables are estimated from it;
/// the projected FFSP then integrates the interval and applies the jump,
/// after which the ensemble jumps and is resampled.
pub fn run_cmp(
    model: &SrnModel,
    partition: &StatePartition,
    mu: &InitialDistribution,
    path: &ObservedPath,
    cfg: &FilterConfig,
) -> Result<FilterResult, FilterError> {
    cfg.check(partition)?;
    check_path(path, partition)?;
    let start = Instant::now();
    let interest = cfg.interest_space(partition)?;
    let grid = TimeGrid::from_jumps(&path.jump_times, path.horizon, cfg.dt, 1);
    let reactions = table_reactions(model, partition);
    let tables = reactions
        .iter()
        .map(|&j| {
            PropensityTable::new(j, TableKey::Interest, interest.clone(), grid.clone(), cfg.interpolation)
        })
        .collect();
    let mut pm = build_projected_model(model, partition, tables)?;
    let split = full_split(partition);
    let mut ens = pf_init(mu, &split, &path.initial, cfg.m, cfg.seed)?;

    let psplit = pm.split();
    let mut solver = FilterSolver::new(&pm, psplit, &interest)?;
    let pi0 = initial_pmf(mu, partition.interest(), &interest)?;
    let mut rho = UnnormalizedPmf::new(pi0.probs, 0.0);
    let mut out = FilterResult::empty(Method::Cmp, interest.clone());
    let full_observable: Vec<usize> = partition.observable_reactions().to_vec();
    let last = grid.segments().len() - 1;

    for (k, seg) in grid.segments().iter().enumerate() {
        let y = path.value_on_segment(k).to_vec();
        for i in 0..=seg.steps {
            if i > 0 {
                pf_propagate(model, &mut ens, k, (seg.node_time(i - 1), seg.node_time(i)))?;
            }
            if !reactions.is_empty() {
                let g = grid.global_node(k, i);
                let slices = cmp_slice(&ens, model, partition, &reactions, &interest);
                for (&j, s) in reactions.iter().zip(slices) {
                    pm.table_for_mut(j).expect("table per reaction").set_slice(g, s)?;
                }
            }
            out.diagnostics.ess.push(pf_ess(&ens));
            if i > 0 && i < seg.steps {
                pf_resample_if_degenerate(&mut ens, cfg.resampling, cfg.ess_threshold)?;
            }
        }
        if k == last {
            let p = pf_estimate_dense(&ens, partition.interest(), &interest);
            let s: f64 = p.iter().sum();
            out.particle_final = Some(if s > 0.0 { p.iter().map(|x| x / s).collect() } else { p });
        }
        solver.advance(&pm, &y, k, seg, k < last, &mut rho, &mut |s| {
            out.push(s.segment, s.time, normalized(s), s.leak);
        })?;
        if k < last {
            let delta = path.delta(k + 1);
            solver.jump(&pm, &delta, &y, TimePoint::new(k, seg.end), &mut rho)?;
            let matching: Vec<usize> = full_observable
                .iter()
                .copied()
                .filter(|&j| {
                    partition
                        .observed()
                        .iter()
                        .zip(&delta)
                        .all(|(&i, &d)| model.reactions[j].net[i] == d)
                })
                .collect();
            pf_jump(model, &mut ens, &matching, TimePoint::new(k, seg.end))?;
            pf_resample(&mut ens, cfg.resampling)?;
        }
    }
    out.diagnostics.states = interest.size();
    out.diagnostics.leak = solver.leak();
    out.diagnostics.log_likelihood = rho.log_mass();
    table_stats(&pm.tables, &mut out.diagnostics);
    out.diagnostics.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Marginal of a full hidden-box PMF on the interest species.
pub fn marginal_pmf(space: &TruncatedSpace, pmf: &Pmf, dims: usize) -> Pmf {
    let (_, probs) = marginalize(space, &pmf.probs, dims);
    Pmf {
        probs,
        time: pmf.time,
    }
}

/// Network size for a dry run: the number of ODE states `cfg.method` would solve.
pub fn planned_states(partition: &StatePartition, cfg: &FilterConfig) -> u128 {
    let n = match cfg.method {
        Method::FullFfsp | Method::Pf => partition.hidden().len(),
        Method::Ump | Method::Cmp => partition.interest().len(),
    };
    crate::ffsp::box_size(&cfg.bounds[..n.min(cfg.bounds.len())])
}
