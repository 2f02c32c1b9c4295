//! Oracle checks run by `srnfilter validate`.
//!
//! Each check compares a reduced computation against an exact one on a small
//! network where both fit in memory.

use serde::Serialize;

use srnfilter_core::ffsp::{initial_pmf, solve_cme_grid, TruncatedSpace};
use srnfilter_core::filters::{run_cmp, run_reference, run_ump, run_with_tables, FilterConfig, Method};
use srnfilter_core::grid::TimeGrid;
use srnfilter_core::model::{InitialDistribution, Reaction, SrnModel, StatePartition};
use srnfilter_core::projection::{build_projected_model, exact_filter_tables, exact_unconditional_tables, Interpolation};
use srnfilter_core::ssa::{extract_observation, ssa_simulate, ObservedPath};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

/// A small problem with its truncation.
#[derive(Debug, Clone)]
pub struct Toy {
    pub model: SrnModel,
    pub partition: StatePartition,
    pub mu: InitialDistribution,
    /// Hidden box bounds in `partition.hidden()` order.
    pub bounds: Vec<(i64, i64)>,
    /// Upper bound used for the observed species in unconditional solves.
    pub observed_upper: i64,
    pub horizon: f64,
}

fn reaction(d: usize, consumed: &[usize], produced: &[usize], rate: f64) -> Reaction {
    let mut c = vec![0; d];
    let mut p = vec![0; d];
    for &i in consumed {
        c[i] += 1;
    }
    for &i in produced {
        p[i] += 1;
    }
    Reaction::new(c, p, rate)
}

/// `A` of interest, `B` nuisance, `C` observed. `B -> C` is the only
/// reaction whose projected propensity is not mass-action.
pub fn toy3() -> Toy {
    let (a, b, c) = (0, 1, 2);
    let reactions = vec![
        reaction(3, &[], &[a], 2.0),
        reaction(3, &[a], &[], 0.5),
        reaction(3, &[a], &[b], 1.0),
        reaction(3, &[b], &[], 0.5),
        reaction(3, &[b], &[c], 1.0),
        reaction(3, &[c], &[], 0.5),
    ];
    let model = SrnModel::new(vec!["A".into(), "B".into(), "C".into()], reactions).expect("valid toy");
    let partition = StatePartition::from_names(&model, &["A"], &["C"]).expect("valid partition");
    let mu = InitialDistribution::deterministic(&[1, 0, 0]).expect("valid initial state");
    Toy {
        model,
        partition,
        mu,
        bounds: vec![(0, 16), (0, 16)],
        observed_upper: 16,
        horizon: 2.0,
    }
}

/// `0 -> A -> B -> 0` with `A` of interest and `B` observed, so nothing is
/// projected away.
pub fn toy2() -> Toy {
    let reactions = vec![
        reaction(2, &[], &[0], 3.0),
        reaction(2, &[0], &[1], 1.0),
        reaction(2, &[1], &[], 0.5),
    ];
    let model = SrnModel::new(vec!["A".into(), "B".into()], reactions).expect("valid toy");
    let partition = StatePartition::from_names(&model, &["A"], &["B"]).expect("valid partition");
    let mu = InitialDistribution::deterministic(&[0, 0]).expect("valid initial state");
    Toy {
        model,
        partition,
        mu,
        bounds: vec![(0, 20)],
        observed_upper: 20,
        horizon: 2.0,
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Generated observation of `toy` from `seed`, restricted to paths with at
/// least three jumps.
pub fn toy_path(toy: &Toy, seed: u64) -> ObservedPath {
    (seed..)
        .map(|s| {
            let z0 = toy.mu.sample(&mut srnfilter_core::rng::stream(s, 0));
            let traj = ssa_simulate(&toy.model, &z0, toy.horizon, s).expect("toy simulates");
            extract_observation(&traj, &toy.partition)
        })
        .find(|p| p.jump_count() >= 3)
        .expect("some path jumps")
}

/// Projected CME with exact unconditional propensities against the
/// marginal of the full CME: largest L1 distance over 20 evenly spaced times.
pub fn projection_marginals(toy: &Toy, dt: f64) -> Result<f64, String> {
    let p = &toy.partition;
    let d = toy.model.species_count();
    // full space in species order
    let mut lower = vec![0; d];
    let mut upper = vec![0; d];
    for (&s, &(lo, hi)) in p.hidden().iter().zip(&toy.bounds) {
        lower[s] = lo;
        upper[s] = hi;
    }
    for &s in p.observed() {
        upper[s] = toy.observed_upper;
    }
    let full = TruncatedSpace::new(lower.clone(), upper.clone()).map_err(|e| e.to_string())?;
    let kept = p.projected();
    let proj = full.project(&kept);
    let all: Vec<usize> = (0..d).collect();
    let p0 = initial_pmf(&toy.mu, &all, &full).map_err(|e| e.to_string())?;
    let grid = TimeGrid::from_jumps(&[], toy.horizon, dt, 1);
    let nodes = grid.node_count();
    let every = ((nodes - 1) / 20).max(1);

    let mut reference = Vec::new();
    let mut node = 0;
    solve_cme_grid(&toy.model, &full, &p0.probs, &grid, &mut |_, w| {
        if node % every == 0 && node > 0 {
            reference.push(marginal_on(&full, w, &kept, &proj));
        }
        node += 1;
    })
    .map_err(|e| e.to_string())?;

    // tables on a half-step grid, so every RK4 stage time is a table node
    let fine = TimeGrid::from_jumps(&[], toy.horizon, dt, 2);
    let tables = exact_unconditional_tables(&toy.model, p, &full, &p0.probs, &fine, &proj, Interpolation::Linear)
        .map_err(|e| e.to_string())?;
    let pm = build_projected_model(&toy.model, p, tables).map_err(|e| e.to_string())?;
    let q0 = initial_pmf(&toy.mu, &kept, &proj).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut node = 0;
    let mut k = 0;
    solve_cme_grid(&pm, &proj, &q0.probs, &grid, &mut |_, w| {
        if node % every == 0 && node > 0 {
            worst = worst.max(l1(w, &reference[k]));
            k += 1;
        }
        node += 1;
    })
    .map_err(|e| e.to_string())?;
    if k != reference.len() || k < 20 {
        return Err(format!("compared {k} times"));
    }
    Ok(worst)
}

fn marginal_on(full: &TruncatedSpace, w: &[f64], keep: &[usize], proj: &TruncatedSpace) -> Vec<f64> {
    let mut out = vec![0.0; proj.size()];
    let mut buf = vec![0; full.dim()];
    let mut key = vec![0; keep.len()];
    for (i, &v) in w.iter().enumerate() {
        full.state_into(i, &mut buf);
        for (k, &s) in key.iter_mut().zip(keep) {
            *k = buf[s];
        }
        if let Some(j) = proj.index(&key) {
            out[j] += v;
        }
    }
    out
}

/// Projected filter with exact conditional tables against the marginal of
/// the full filter: largest L1 distance over every grid time.
pub fn filtered_projection(toy: &Toy, path: &ObservedPath, dt: f64) -> Result<f64, String> {
    let p = &toy.partition;
    let cfg = FilterConfig::new(Method::Cmp, 1, dt, toy.bounds.clone(), 0);
    let reference = run_reference(&toy.model, p, &toy.mu, path, &FilterConfig { method: Method::FullFfsp, ..cfg.clone() })
        .map_err(|e| e.to_string())?;
    let hidden = cfg.hidden_space(p).map_err(|e| e.to_string())?;
    let interest = cfg.interest_space(p).map_err(|e| e.to_string())?;
    let pi0 = initial_pmf(&toy.mu, &p.hidden(), &hidden).map_err(|e| e.to_string())?;
    let fine = TimeGrid::from_jumps(&path.jump_times, path.horizon, dt, 2);
    let tables = exact_filter_tables(&toy.model, p, &hidden, path, &pi0, &fine, &interest, Interpolation::Linear)
        .map_err(|e| e.to_string())?;
    let oracle = run_with_tables(&toy.model, p, &toy.mu, path, &cfg, tables).map_err(|e| e.to_string())?;
    if oracle.pmfs.len() != reference.pmfs.len() {
        return Err("output grids differ".into());
    }
    Ok(oracle
        .pmfs
        .iter()
        .zip(&reference.pmfs)
        .map(|(a, b)| l1(a, b))
        .fold(0.0, f64::max))
}

/// Largest per-state difference between UMP or CMP and full FFSP when the
/// projection is the identity.
pub fn identity_projection(toy: &Toy, path: &ObservedPath, dt: f64) -> Result<f64, String> {
    let p = &toy.partition;
    if !p.nuisance().is_empty() {
        return Err("toy has nuisance species".into());
    }
    let cfg = FilterConfig::new(Method::FullFfsp, 200, dt, toy.bounds.clone(), 3);
    let reference = run_reference(&toy.model, p, &toy.mu, path, &cfg).map_err(|e| e.to_string())?;
    let ump = run_ump(&toy.model, p, &toy.mu, path, &FilterConfig { method: Method::Ump, ..cfg.clone() })
        .map_err(|e| e.to_string())?;
    let cmp = run_cmp(&toy.model, p, &toy.mu, path, &FilterConfig { method: Method::Cmp, ..cfg.clone() })
        .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for r in [&ump, &cmp] {
        if r.pmfs.len() != reference.pmfs.len() {
            return Err("output grids differ".into());
        }
        for (a, b) in r.pmfs.iter().zip(&reference.pmfs) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Ok(worst)
}

fn check(name: &str, tol: f64, r: Result<f64, String>) -> Check {
    match r {
        Ok(v) => Check::new(name, v, tol),
        Err(e) => {
            let mut c = Check::new(&format!("{name} ({e})"), f64::INFINITY, tol);
            c.passed = false;
            c
        }
    }
}

/// Every oracle check at its default tolerance.
pub fn run_all(seed: u64) -> Vec<Check> {
    let t3 = toy3();
    let t2 = toy2();
    let path3 = toy_path(&t3, seed);
    let path2 = toy_path(&t2, seed);
    vec![
        check("projected CME marginals (L1, 20 times)", 1e-5, projection_marginals(&t3, 0.01)),
        check(
            "filter with exact conditional tables (L1, all times)",
            1e-5,
            filtered_projection(&t3, &path3, 0.01),
        ),
        check("identity projection (max per state)", 1e-8, identity_projection(&t2, &path2, 0.01)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toys_are_consistent() {
        let t = toy3();
        assert_eq!(t.partition.nuisance(), &[1]);
        assert_eq!(t.bounds.len(), t.partition.hidden().len());
        let t = toy2();
        assert!(t.partition.nuisance().is_empty());
    }
}
