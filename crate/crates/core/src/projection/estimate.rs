use std::collections::BTreeMap;

use rayon::prelude::*;

use super::table::{extrapolate, Interpolation, PropensityTable, RawCell, TableKey, TableSlice};
use super::{table_reactions, ProjectionError};
use crate::ffsp::{ffsp_filter_on_grid, solve_cme_grid, Pmf, TruncatedSpace};
use crate::grid::TimeGrid;
use crate::model::{InitialDistribution, SrnModel, StatePartition};
use crate::network::CoordinateSplit;
use crate::particle::Ensemble;
use crate::rng::{self, INIT_STREAM_BASE};
use crate::ssa::{ssa_states_at, ObservedPath, SsaOptions};

/// UMP cells with fewer samples than this are unreliable.
pub const UMP_MIN_SUPPORT: f64 = 10.0;
/// CMP cells with a smaller share of the ensemble weight are unreliable.
pub const CMP_DELTA: f64 = 1e-3;

const RUN_CHUNK: usize = 32;

/// Per key: weighted propensity sums (one per table reaction) and total weight.
type Bins = BTreeMap<Vec<i64>, (Vec<f64>, f64)>;

fn add(bins: &mut Bins, key: Vec<i64>, w: f64, rates: impl Iterator<Item = f64>) {
    let e = bins.entry(key).or_insert_with(|| (Vec::new(), 0.0));
    if e.0.is_empty() {
        e.0 = rates.map(|a| w * a).collect();
    } else {
        for (s, a) in e.0.iter_mut().zip(rates) {
            *s += w * a;
        }
    }
    e.1 += w;
}

fn merge(into: &mut Bins, from: Bins) {
    for (k, (sums, w)) in from {
        match into.get_mut(&k) {
            Some(e) => {
                for (a, b) in e.0.iter_mut().zip(&sums) {
                    *a += b;
                }
                e.1 += w;
            }
            None => {
                into.insert(k, (sums, w));
            }
        }
    }
}

/// Raw cells of table reaction `r` under a reliability rule on the bin weight.
fn raw_cells(bins: &Bins, r: usize, reliable: impl Fn(f64) -> bool) -> BTreeMap<Vec<i64>, RawCell> {
    bins.iter()
        .filter(|(_, (_, w))| *w > 0.0)
        .map(|(k, (sums, w))| {
            (
                k.clone(),
                RawCell {
                    value: sums[r] / w,
                    support: *w,
                    reliable: reliable(*w),
                },
            )
        })
        .collect()
}

/// Which cells the UMP tables store.
#[derive(Debug, Clone, Copy)]
pub enum UmpDomain<'a> {
    /// Every `z'` in a box over the projected coordinates.
    Box(&'a TruncatedSpace),
    /// The interest box with `y` held at the observed value of each
    /// segment; other `z'` are served by the slice's affine fit.
    Path {
        interest: &'a TruncatedSpace,
        path: &'a ObservedPath,
    },
}

/// Monte Carlo estimate of the unconditional projected propensities
/// `E[a_j(Z(t)) | Z'(t) = z']` from `m` full-model SSA runs started from `mu`,
/// recorded at every node of `grid`. Cells need `UMP_MIN_SUPPORT` samples to
/// be reliable; the rest are extrapolated.
#[allow(clippy::too_many_arguments)]
pub fn ump_estimate(
    model: &SrnModel,
    partition: &StatePartition,
    mu: &InitialDistribution,
    m: usize,
    grid: &TimeGrid,
    domain: UmpDomain,
    interpolation: Interpolation,
    seed: u64,
) -> Result<Vec<PropensityTable>, ProjectionError> {
    if m == 0 {
        return Err(ProjectionError::Input("sample count must be positive".into()));
    }
    let reactions = table_reactions(model, partition);
    if reactions.is_empty() {
        return Ok(Vec::new());
    }
    let kept = partition.projected();
    let nodes = grid.node_count();
    let stops: Vec<f64> = (0..nodes).map(|g| grid.node_time(g)).collect();
    let runs: Vec<usize> = (0..m).collect();
    let partial: Vec<Result<Vec<Bins>, ProjectionError>> = runs
        .par_chunks(RUN_CHUNK)
        .map(|chunk| {
            let mut bins = vec![Bins::new(); nodes];
            for &i in chunk {
                let z0 = mu.sample(&mut rng::stream(seed, INIT_STREAM_BASE + i as u64));
                let mut r = rng::stream(seed, i as u64);
                let states = ssa_states_at(model, &z0, &stops, &mut r, SsaOptions::default())?;
                for (g, z) in states.into_iter().enumerate() {
                    let key = kept.iter().map(|&s| z[s]).collect();
                    add(&mut bins[g], key, 1.0, reactions.iter().map(|&j| model.propensity(j, &z)));
                }
            }
            Ok(bins)
        })
        .collect();
    let mut bins = vec![Bins::new(); nodes];
    for part in partial {
        for (into, from) in bins.iter_mut().zip(part?) {
            merge(into, from);
        }
    }

    let (free, key) = match domain {
        UmpDomain::Box(b) => (b.clone(), TableKey::Projected),
        UmpDomain::Path { interest, .. } => (interest.clone(), TableKey::Projected),
    };
    let mut tables: Vec<PropensityTable> = reactions
        .iter()
        .map(|&j| PropensityTable::new(j, key, free.clone(), grid.clone(), interpolation))
        .collect();
    for (g, b) in bins.iter().enumerate() {
        let (segment, _) = grid.locate(g);
        let fixed: Vec<i64> = match domain {
            UmpDomain::Box(_) => Vec::new(),
            UmpDomain::Path { path, .. } => path.value_on_segment(segment).to_vec(),
        };
        for (r, table) in tables.iter_mut().enumerate() {
            let cells = raw_cells(b, r, |w| w >= UMP_MIN_SUPPORT);
            table.set_slice(g, extrapolate(&cells, &free, &fixed))?;
        }
    }
    Ok(tables)
}

/// PF estimate of the conditional projected propensities at one time: the
/// weighted mean of `a_j(V)` over particles binned by `x'`. Cells holding
/// less than `CMP_DELTA` of the total weight are unreliable.
pub fn cmp_slice(
    ens: &Ensemble,
    model: &SrnModel,
    partition: &StatePartition,
    reactions: &[usize],
    interest: &TruncatedSpace,
) -> Vec<Result<TableSlice, ProjectionError>> {
    let mut bins = Bins::new();
    if let Some(w) = ens.normalized_weights() {
        for (p, w) in ens.particles.iter().zip(w) {
            if w > 0.0 {
                let key = partition.interest().iter().map(|&s| p.z[s]).collect();
                add(&mut bins, key, w, reactions.iter().map(|&j| model.propensity(j, &p.z)));
            }
        }
    }
    (0..reactions.len())
        .map(|r| extrapolate(&raw_cells(&bins, r, |w| w >= CMP_DELTA), interest, &[]))
        .collect()
}

/// Exact conditional means from a distribution `weights` over `space`,
/// whose coordinates are the model species `space_species`; the remaining
/// species are held at `rest` (values for `rest_species`). Cells are keyed
/// by `key_species`; every cell with positive mass is reliable.
#[allow(clippy::too_many_arguments)]
pub fn conditional_slice(
    model: &SrnModel,
    reactions: &[usize],
    space: &TruncatedSpace,
    space_species: &[usize],
    weights: &[f64],
    rest_species: &[usize],
    rest: &[i64],
    key_species: &[usize],
    free: &TruncatedSpace,
    fixed: &[i64],
) -> Vec<Result<TableSlice, ProjectionError>> {
    let split = CoordinateSplit::new(space_species.to_vec(), rest_species.to_vec());
    let mut bins = Bins::new();
    let mut x = vec![0i64; space.dim()];
    let mut z = vec![0i64; model.species_count()];
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        space.state_into(i, &mut x);
        split.assemble_into(&x, rest, &mut z);
        let key = key_species.iter().map(|&s| z[s]).collect();
        add(&mut bins, key, w, reactions.iter().map(|&j| model.propensity(j, &z)));
    }
    (0..reactions.len())
        .map(|r| extrapolate(&raw_cells(&bins, r, |w| w > 0.0), free, fixed))
        .collect()
}

/// Exact unconditional tables keyed by `z'` from the truncated CME of the
/// full model on `space` (one coordinate per species), recorded on `grid`.
pub fn exact_unconditional_tables(
    model: &SrnModel,
    partition: &StatePartition,
    space: &TruncatedSpace,
    p0: &[f64],
    grid: &TimeGrid,
    free: &TruncatedSpace,
    interpolation: Interpolation,
) -> Result<Vec<PropensityTable>, ProjectionError> {
    let reactions = table_reactions(model, partition);
    let mut tables: Vec<PropensityTable> = reactions
        .iter()
        .map(|&j| PropensityTable::new(j, TableKey::Projected, free.clone(), grid.clone(), interpolation))
        .collect();
    let all: Vec<usize> = (0..model.species_count()).collect();
    let kept = partition.projected();
    let mut node = 0;
    let mut failure = None;
    solve_cme_grid(model, space, p0, grid, &mut |_, p| {
        let slices = conditional_slice(model, &reactions, space, &all, p, &[], &[], &kept, free, &[]);
        for (t, s) in tables.iter_mut().zip(slices) {
            if let Err(e) = t.set_slice(node, s) {
                failure.get_or_insert(e);
            }
        }
        node += 1;
    })
    .map_err(|e| ProjectionError::Input(e.to_string()))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(tables),
    }
}

/// Exact conditional tables keyed by `x'` from the full FFSP filter on the
/// hidden box `space` (coordinates `partition.hidden()`), recorded on `grid`.
pub fn exact_filter_tables(
    model: &SrnModel,
    partition: &StatePartition,
    space: &TruncatedSpace,
    path: &ObservedPath,
    pi0: &Pmf,
    grid: &TimeGrid,
    interest: &TruncatedSpace,
    interpolation: Interpolation,
) -> Result<Vec<PropensityTable>, ProjectionError> {
    let reactions = table_reactions(model, partition);
    let mut tables: Vec<PropensityTable> = reactions
        .iter()
        .map(|&j| {
            PropensityTable::new(j, TableKey::Interest, interest.clone(), grid.clone(), interpolation)
        })
        .collect();
    let hidden = partition.hidden();
    let split = CoordinateSplit::new(hidden.clone(), partition.observed().to_vec());
    let mut failure = None;
    ffsp_filter_on_grid(model, &split, space, path, pi0, grid, &mut |s| {
        let y = path.value_on_segment(s.segment);
        let slices = conditional_slice(
            model,
            &reactions,
            space,
            &hidden,
            s.weights,
            partition.observed(),
            y,
            partition.interest(),
            interest,
            &[],
        );
        let g = grid.global_node(s.segment, s.node);
        for (t, sl) in tables.iter_mut().zip(slices) {
            if let Err(e) = t.set_slice(g, sl) {
                failure.get_or_insert(e);
            }
        }
    })
    .map_err(|e| ProjectionError::Input(e.to_string()))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(tables),
    }
}
