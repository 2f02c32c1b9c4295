//! Exact trajectory sampling.
//!
//! [`ssa_simulate`] is Gillespie's direct method for constant-rate networks.
//! [`mnrm_simulate`] handles propensities that are piecewise constant in
//! time on a [`TimeGrid`], using the modified next reaction method with the
//! internal-time integrals advanced cell by cell.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::TimeGrid;
use crate::model::{InitialDistribution, StatePartition};
use crate::network::{ReactionNetwork, TimePoint};
use crate::rng::{self, StreamRng};

pub const DEFAULT_MAX_JUMPS: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulation exceeded {0} jumps")]
    ExplosionGuard(usize),
    #[error("no propensity value for reaction {reaction} at t={t} (state {state:?})")]
    TableGap { reaction: usize, t: f64, state: Vec<i64> },
    #[error("invalid simulation input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy)]
pub struct SsaOptions {
    pub max_jumps: usize,
}

impl Default for SsaOptions {
    fn default() -> Self {
        SsaOptions { max_jumps: DEFAULT_MAX_JUMPS }
    }
}

/// Piecewise-constant sample path. `states[i]` holds on `[times[i], times[i+1])`
/// and `fired[i]` is the reaction that produced `states[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<i64>>,
    pub fired: Vec<usize>,
    pub horizon: f64,
}

impl Trajectory {
    pub fn jump_count(&self) -> usize {
        self.fired.len()
    }

    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> &[i64] {
        let i = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        &self.states[i]
    }

    pub fn final_state(&self) -> &[i64] {
        self.states.last().expect("trajectory has an initial state")
    }
}

/// Jump times and values of the observed species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedPath {
    pub initial: Vec<i64>,
    pub jump_times: Vec<f64>,
    pub values: Vec<Vec<i64>>,
    pub horizon: f64,
}

impl ObservedPath {
    pub fn constant(initial: Vec<i64>, horizon: f64) -> Self {
        ObservedPath {
            initial,
            jump_times: Vec::new(),
            values: Vec::new(),
            horizon,
        }
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    /// Observed value on segment `k` (after the k-th jump).
    pub fn value_on_segment(&self, k: usize) -> &[i64] {
        if k == 0 {
            &self.initial
        } else {
            &self.values[k - 1]
        }
    }

    /// Change of the observed value at jump `k` (1-based, as t_k).
    pub fn delta(&self, k: usize) -> Vec<i64> {
        let before = self.value_on_segment(k - 1);
        self.values[k - 1]
            .iter()
            .zip(before)
            .map(|(a, b)| a - b)
            .collect()
    }

    pub fn check(&self) -> Result<(), SimError> {
        if self.values.len() != self.jump_times.len() {
            return Err(SimError::Input("jump_times and values differ in length".into()));
        }
        let mut prev_t = 0.0;
        for (k, &t) in self.jump_times.iter().enumerate() {
            if t <= prev_t || t > self.horizon {
                return Err(SimError::Input(format!("jump time {t} out of order or past horizon")));
            }
            prev_t = t;
            if self.values[k].len() != self.initial.len() {
                return Err(SimError::Input("observed value has wrong dimension".into()));
            }
            if self.value_on_segment(k) == self.values[k].as_slice() {
                return Err(SimError::Input(format!("jump {} does not change the value", k + 1)));
            }
        }
        Ok(())
    }
}

/// Direct-method SSA from `z0` over `[0, horizon]`, seeded stream 0 of `seed`.
pub fn ssa_simulate<N: ReactionNetwork + ?Sized>(
    model: &N,
    z0: &[i64],
    horizon: f64,
    seed: u64,
) -> Result<Trajectory, SimError> {
    let mut rng = rng::stream(seed, 0);
    ssa_simulate_with(model, z0, horizon, &mut rng, SsaOptions::default())
}

pub fn ssa_simulate_with<N: ReactionNetwork + ?Sized, R: Rng + ?Sized>(
    model: &N,
    z0: &[i64],
    horizon: f64,
    rng: &mut R,
    opts: SsaOptions,
) -> Result<Trajectory, SimError> {
    if !(horizon > 0.0) {
        return Err(SimError::Input("horizon must be positive".into()));
    }
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![z0.to_vec()],
        fired: Vec::new(),
        horizon,
    };
    let mut z = z0.to_vec();
    let mut props = vec![0.0; model.reaction_count()];
    let at = TimePoint::new(0, 0.0);
    let mut t = 0.0;
    loop {
        let total = fill_props(model, &z, at, &mut props);
        if total <= 0.0 {
            break;
        }
        t += rng::exponential(rng, total);
        if t > horizon {
            break;
        }
        let j = choose(&props, total, rng);
        apply(&mut z, model.net(j));
        traj.times.push(t);
        traj.states.push(z.clone());
        traj.fired.push(j);
        if traj.fired.len() > opts.max_jumps {
            return Err(SimError::ExplosionGuard(opts.max_jumps));
        }
    }
    Ok(traj)
}

/// States at each of the sorted `stops` without storing the path. Restarting
/// the exponential clock at a stop is exact for constant propensities.
pub fn ssa_states_at<N: ReactionNetwork + ?Sized, R: Rng + ?Sized>(
    model: &N,
    z0: &[i64],
    stops: &[f64],
    rng: &mut R,
    opts: SsaOptions,
) -> Result<Vec<Vec<i64>>, SimError> {
    let mut z = z0.to_vec();
    let mut props = vec![0.0; model.reaction_count()];
    let at = TimePoint::new(0, 0.0);
    let mut t = 0.0;
    let mut jumps = 0usize;
    let mut out = Vec::with_capacity(stops.len());
    for &stop in stops {
        loop {
            let total = fill_props(model, &z, at, &mut props);
            if total <= 0.0 {
                break;
            }
            let next = t + rng::exponential(rng, total);
            if next > stop {
                break;
            }
            t = next;
            let j = choose(&props, total, rng);
            apply(&mut z, model.net(j));
            jumps += 1;
            if jumps > opts.max_jumps {
                return Err(SimError::ExplosionGuard(opts.max_jumps));
            }
        }
        t = t.max(stop);
        out.push(z.clone());
    }
    Ok(out)
}

#[inline]
fn fill_props<N: ReactionNetwork + ?Sized>(
    model: &N,
    z: &[i64],
    at: TimePoint,
    props: &mut [f64],
) -> f64 {
    let mut total = 0.0;
    for (j, p) in props.iter_mut().enumerate() {
        *p = model.rate(j, z, at);
        total += *p;
    }
    total
}

#[inline]
pub(crate) fn choose<R: Rng + ?Sized>(props: &[f64], total: f64, rng: &mut R) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in props.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if target < acc {
                return j;
            }
        }
    }
    last
}

#[inline]
pub(crate) fn apply(z: &mut [i64], net: &[i64]) {
    for (zi, &n) in z.iter_mut().zip(net) {
        *zi += n;
    }
    debug_assert!(z.iter().all(|&v| v >= 0), "negative copy number {z:?}");
}

/// Modified next reaction method for propensities that are constant on each
/// cell of `cells` (value at the left node). Simulates over `[a, b]`.
pub fn mnrm_simulate<N: ReactionNetwork + ?Sized>(
    net: &N,
    cells: &TimeGrid,
    z0: &[i64],
    interval: (f64, f64),
    seed: u64,
) -> Result<Trajectory, SimError> {
    let mut rng = rng::stream(seed, 0);
    mnrm_simulate_with(net, cells, z0, interval, &mut rng, SsaOptions::default())
}

pub fn mnrm_simulate_with<N: ReactionNetwork + ?Sized, R: Rng + ?Sized>(
    net: &N,
    cells: &TimeGrid,
    z0: &[i64],
    (a, b): (f64, f64),
    rng: &mut R,
    opts: SsaOptions,
) -> Result<Trajectory, SimError> {
    if !(b > a) {
        return Err(SimError::Input("empty simulation interval".into()));
    }
    let jr = net.reaction_count();
    let mut traj = Trajectory {
        times: vec![a],
        states: vec![z0.to_vec()],
        fired: Vec::new(),
        horizon: b,
    };
    let mut z = z0.to_vec();
    // internal time used so far and next firing point, per reaction
    let mut internal = vec![0.0; jr];
    let mut next_fire: Vec<f64> = (0..jr).map(|_| rng::exponential(rng, 1.0)).collect();
    let mut props = vec![0.0; jr];
    let mut t = a;

    while t < b {
        let (at, cell_end) = cell_at(cells, t, b);
        for (j, p) in props.iter_mut().enumerate() {
            *p = net.try_rate(j, &z, at).ok_or_else(|| SimError::TableGap {
                reaction: j,
                t,
                state: z.clone(),
            })?;
        }
        let mut best = None;
        let mut best_dt = f64::INFINITY;
        for j in 0..jr {
            if props[j] > 0.0 {
                let dt = (next_fire[j] - internal[j]) / props[j];
                if dt < best_dt {
                    best_dt = dt;
                    best = Some(j);
                }
            }
        }
        match best {
            Some(j) if t + best_dt < cell_end => {
                for k in 0..jr {
                    internal[k] += props[k] * best_dt;
                }
                t += best_dt;
                apply(&mut z, net.net(j));
                next_fire[j] += rng::exponential(rng, 1.0);
                traj.times.push(t);
                traj.states.push(z.clone());
                traj.fired.push(j);
                if traj.fired.len() > opts.max_jumps {
                    return Err(SimError::ExplosionGuard(opts.max_jumps));
                }
            }
            _ => {
                let span = cell_end - t;
                for k in 0..jr {
                    internal[k] += props[k] * span;
                }
                t = cell_end;
            }
        }
    }
    Ok(traj)
}

/// Time point used for propensities on the cell containing `t`, and the end
/// of that cell (capped at `b`).
fn cell_at(cells: &TimeGrid, t: f64, b: f64) -> (TimePoint, f64) {
    let k = cells.segment_at(t);
    let seg = cells.segment(k);
    if seg.steps == 0 || t >= seg.end {
        return (TimePoint::new(k, t.min(seg.end)), b);
    }
    let h = seg.step();
    let mut i = (((t - seg.start) / h) + 1e-12).floor().max(0.0) as usize;
    i = i.min(seg.steps - 1);
    while i + 1 < seg.steps && seg.node_time(i + 1) <= t {
        i += 1;
    }
    (TimePoint::new(k, seg.node_time(i)), seg.node_time(i + 1).min(b))
}

/// Keeps the jumps of `traj` that change the observed species.
pub fn extract_observation(traj: &Trajectory, partition: &StatePartition) -> ObservedPath {
    let mut path = ObservedPath::constant(partition.observed_slice(&traj.states[0]), traj.horizon);
    let mut current = path.initial.clone();
    for (t, z) in traj.times.iter().zip(&traj.states).skip(1) {
        let y = partition.observed_slice(z);
        if y != current {
            path.jump_times.push(*t);
            path.values.push(y.clone());
            current = y;
        }
    }
    path
}

/// Draws `Z(0)` from the product initial law.
pub fn sample_initial(mu: &InitialDistribution, seed: u64) -> Vec<i64> {
    let mut rng: StreamRng = rng::stream(seed, rng::INIT_STREAM_BASE);
    mu.sample(&mut rng)
}
