//! Bootstrap-style particle filter for exact observations.
//!
//! Between observed jumps each particle follows the hidden dynamics driven
//! by the unobservable reactions only, and its log-weight drops by the
//! integral of the observable propensities. At a jump a matching reaction is
//! drawn uniformly and the particle is reweighted by its propensity.
//! Resampling happens right after every jump.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ffsp::{Pmf, TruncatedSpace};
use crate::grid::TimeGrid;
use crate::model::InitialDistribution;
use crate::network::{CoordinateSplit, ReactionNetwork, TimePoint};
use crate::rng::{self, StreamRng, INIT_STREAM_BASE, RESAMPLE_STREAM_BASE};
use crate::ssa::{apply, choose, ObservedPath, SimError, DEFAULT_MAX_JUMPS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfError {
    #[error("every particle has zero weight at t={t}")]
    Degenerate { t: f64 },
    #[error("no observable reaction matches the observed jump {delta:?} at t={t}")]
    EmptyMatch { t: f64, delta: Vec<i64> },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

#[derive(Debug, Clone)]
pub struct Particle {
    /// Full state; the observed coordinates always hold the current observation.
    pub z: Vec<i64>,
    pub log_w: f64,
    rng: StreamRng,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    split: CoordinateSplit,
    master: u64,
    resample_events: u64,
    /// Log of the mean weight removed by past resampling steps.
    log_scale: f64,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn split(&self) -> &CoordinateSplit {
        &self.split
    }

    fn max_log_w(&self) -> f64 {
        self.particles
            .iter()
            .map(|p| p.log_w)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Normalized weights, summed in particle order.
    pub fn normalized_weights(&self) -> Option<Vec<f64>> {
        let m = self.max_log_w();
        if !m.is_finite() {
            return None;
        }
        let w: Vec<f64> = self.particles.iter().map(|p| (p.log_w - m).exp()).collect();
        let s: f64 = w.iter().sum();
        Some(w.into_iter().map(|v| v / s).collect())
    }

    /// `log(mean w)`, the running estimate of the observation log-likelihood.
    pub fn log_likelihood(&self) -> f64 {
        let m = self.max_log_w();
        if !m.is_finite() {
            return f64::NEG_INFINITY;
        }
        let s: f64 = self.particles.iter().map(|p| (p.log_w - m).exp()).sum();
        self.log_scale + m + s.ln() - (self.len() as f64).ln()
    }
}

fn build(split: &CoordinateSplit, y0: &[i64], hidden: Vec<Vec<i64>>, master: u64) -> Ensemble {
    let d = split.dim();
    let particles = hidden
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut z = vec![0; d];
            split.assemble_into(&x, y0, &mut z);
            Particle {
                z,
                log_w: 0.0,
                rng: rng::stream(master, i as u64),
            }
        })
        .collect();
    Ensemble {
        particles,
        split: split.clone(),
        master,
        resample_events: 0,
        log_scale: 0.0,
    }
}

/// `m` particles with hidden coordinates drawn from the initial law.
pub fn pf_init(
    mu: &InitialDistribution,
    split: &CoordinateSplit,
    y0: &[i64],
    m: usize,
    master: u64,
) -> Result<Ensemble, PfError> {
    if m == 0 {
        return Err(PfError::Input("particle count must be positive".into()));
    }
    if mu.dim() != split.dim() {
        return Err(PfError::Input("initial law does not match the network".into()));
    }
    let hidden = (0..m)
        .map(|i| {
            let mut r = rng::stream(master, INIT_STREAM_BASE + i as u64);
            mu.sample_coords(&split.hidden, &mut r)
        })
        .collect();
    Ok(build(split, y0, hidden, master))
}

/// `m` particles drawn from a PMF over a box of the hidden coordinates.
pub fn pf_init_from_pmf(
    pmf: &Pmf,
    space: &TruncatedSpace,
    split: &CoordinateSplit,
    y0: &[i64],
    m: usize,
    master: u64,
) -> Result<Ensemble, PfError> {
    if m == 0 || pmf.probs.len() != space.size() || space.dim() != split.hidden.len() {
        return Err(PfError::Input("PMF, box and particle count are inconsistent".into()));
    }
    let cdf: Vec<f64> = pmf
        .probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let total = *cdf.last().unwrap_or(&0.0);
    if !(total > 0.0) {
        return Err(PfError::Input("initial PMF has no mass".into()));
    }
    let hidden = (0..m)
        .map(|i| {
            let mut r = rng::stream(master, INIT_STREAM_BASE + i as u64);
            let u = r.random::<f64>() * total;
            let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            space.state(k)
        })
        .collect();
    Ok(build(split, y0, hidden, master))
}

fn unobservable<N: ReactionNetwork + ?Sized>(net: &N, split: &CoordinateSplit) -> Vec<bool> {
    (0..net.reaction_count())
        .map(|j| split.observed.iter().all(|&i| net.net(j)[i] == 0))
        .collect()
}

/// Moves every particle from `t0` to `t1` under the unobservable reactions.
/// Propensities are read at `TimePoint(segment, t0)`, so the network must be
/// time-independent over the interval.
pub fn pf_propagate<N: ReactionNetwork + ?Sized>(
    net: &N,
    ens: &mut Ensemble,
    segment: usize,
    (t0, t1): (f64, f64),
) -> Result<(), PfError> {
    if net.time_dependent() {
        return Err(PfError::Input(
            "the particle filter needs time-independent propensities".into(),
        ));
    }
    if t1 <= t0 {
        return Ok(());
    }
    let is_u = unobservable(net, &ens.split);
    let at = TimePoint::new(segment, t0);
    let jr = net.reaction_count();
    ens.particles.par_iter_mut().try_for_each_init(
        || vec![0.0; jr],
        |props, p| {
            if p.log_w == f64::NEG_INFINITY {
                return Ok(());
            }
            let mut t = t0;
            let mut jumps = 0usize;
            loop {
                let mut total_u = 0.0;
                let mut total_o = 0.0;
                for j in 0..jr {
                    let a = net.rate(j, &p.z, at);
                    if is_u[j] {
                        props[j] = a;
                        total_u += a;
                    } else {
                        props[j] = 0.0;
                        total_o += a;
                    }
                }
                let dt = if total_u > 0.0 {
                    rng::exponential(&mut p.rng, total_u)
                } else {
                    f64::INFINITY
                };
                if t + dt >= t1 {
                    p.log_w -= total_o * (t1 - t);
                    return Ok(());
                }
                p.log_w -= total_o * dt;
                t += dt;
                let j = choose(props, total_u, &mut p.rng);
                apply(&mut p.z, net.net(j));
                jumps += 1;
                if jumps > DEFAULT_MAX_JUMPS {
                    return Err(PfError::Sim(SimError::ExplosionGuard(DEFAULT_MAX_JUMPS)));
                }
            }
        },
    )
}

/// Jump update for the matching reactions at time `pre.t`.
pub fn pf_jump<N: ReactionNetwork + ?Sized>(
    net: &N,
    ens: &mut Ensemble,
    matching: &[usize],
    pre: TimePoint,
) -> Result<(), PfError> {
    if matching.is_empty() {
        return Err(PfError::Input("empty set of matching reactions".into()));
    }
    let observed = ens.split.observed.clone();
    ens.particles.par_iter_mut().for_each(|p| {
        let l = matching[p.rng.random_range(0..matching.len())];
        let a = net.rate(l, &p.z, pre);
        if a > 0.0 && p.log_w > f64::NEG_INFINITY {
            p.log_w += a.ln();
            apply(&mut p.z, net.net(l));
        } else {
            p.log_w = f64::NEG_INFINITY;
            // keep the observed coordinates in step with the path
            for &i in &observed {
                p.z[i] += net.net(l)[i];
            }
        }
    });
    if !ens.max_log_w().is_finite() {
        return Err(PfError::Degenerate { t: pre.t });
    }
    Ok(())
}

/// Resamples in place and resets every weight to one. The mean weight is
/// kept in the ensemble so the likelihood estimate carries over.
pub fn pf_resample(ens: &mut Ensemble, scheme: Resampling) -> Result<(), PfError> {
    let w = ens
        .normalized_weights()
        .ok_or(PfError::Degenerate { t: f64::NAN })?;
    let log_mean = ens.log_likelihood();
    let m = ens.len();
    let mut r = rng::stream(ens.master, RESAMPLE_STREAM_BASE + ens.resample_events);
    ens.resample_events += 1;
    let cdf: Vec<f64> = w
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let pick = |u: f64| cdf.partition_point(|&c| c <= u).min(m - 1);
    let ancestors: Vec<usize> = match scheme {
        Resampling::Multinomial => (0..m).map(|_| pick(r.random::<f64>())).collect(),
        Resampling::Systematic => {
            let u0: f64 = r.random::<f64>() / m as f64;
            (0..m).map(|i| pick(u0 + i as f64 / m as f64)).collect()
        }
    };
    let states: Vec<Vec<i64>> = ancestors.iter().map(|&a| ens.particles[a].z.clone()).collect();
    for (p, z) in ens.particles.iter_mut().zip(states) {
        p.z = z;
        p.log_w = 0.0;
    }
    ens.log_scale = log_mean;
    Ok(())
}

/// Effective sample size `(sum w)^2 / sum w^2`.
pub fn pf_ess(ens: &Ensemble) -> f64 {
    match ens.normalized_weights() {
        Some(w) => 1.0 / w.iter().map(|v| v * v).sum::<f64>(),
        None => 0.0,
    }
}

/// Weighted empirical law of the species `coords`.
pub fn pf_estimate(ens: &Ensemble, coords: &[usize]) -> BTreeMap<Vec<i64>, f64> {
    let mut out = BTreeMap::new();
    if let Some(w) = ens.normalized_weights() {
        for (p, w) in ens.particles.iter().zip(w) {
            if w > 0.0 {
                let key: Vec<i64> = coords.iter().map(|&i| p.z[i]).collect();
                *out.entry(key).or_insert(0.0) += w;
            }
        }
    }
    out
}

/// Weighted empirical law of `coords` as a dense PMF over `space`; particles
/// outside the box are dropped.
pub fn pf_estimate_dense(ens: &Ensemble, coords: &[usize], space: &TruncatedSpace) -> Vec<f64> {
    let mut probs = vec![0.0; space.size()];
    for (k, w) in pf_estimate(ens, coords) {
        if let Some(i) = space.index(&k) {
            probs[i] += w;
        }
    }
    probs
}

/// Weighted mean of species `i`.
pub fn weighted_mean(ens: &Ensemble, i: usize) -> f64 {
    match ens.normalized_weights() {
        Some(w) => ens
            .particles
            .iter()
            .zip(w)
            .map(|(p, w)| w * p.z[i] as f64)
            .sum(),
        None => f64::NAN,
    }
}

/// What a particle-filter observer sees at a grid node.
pub struct EnsembleView<'a> {
    pub segment: usize,
    pub node: usize,
    pub time: f64,
    pub pre_jump: bool,
    pub ensemble: &'a Ensemble,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PfConfig {
    pub resampling: Resampling,
    /// Also resample between jumps when the ESS drops below this fraction of M.
    pub ess_threshold: Option<f64>,
}

/// Resamples if the ESS is below `threshold * M`. Returns whether it did.
pub fn pf_resample_if_degenerate(
    ens: &mut Ensemble,
    scheme: Resampling,
    threshold: Option<f64>,
) -> Result<bool, PfError> {
    match threshold {
        Some(f) if pf_ess(ens) < f * ens.len() as f64 => pf_resample(ens, scheme).map(|_| true),
        _ => Ok(false),
    }
}

/// Runs the filter along `path`, stopping at every node of `grid` (which
/// must be cut at the path's jump times). The observer runs after
/// propagation and before the jump and resampling.
pub fn pf_run<N: ReactionNetwork + ?Sized>(
    net: &N,
    ens: &mut Ensemble,
    path: &ObservedPath,
    grid: &TimeGrid,
    cfg: PfConfig,
    observer: &mut dyn FnMut(&EnsembleView) -> Result<(), PfError>,
) -> Result<(), PfError> {
    if grid.segments().len() != path.jump_count() + 1 {
        return Err(PfError::Input("grid is not aligned with the observed path".into()));
    }
    let split = ens.split.clone();
    let observable: Vec<usize> = (0..net.reaction_count())
        .filter(|&j| split.observed.iter().any(|&i| net.net(j)[i] != 0))
        .collect();
    let last = grid.segments().len() - 1;
    for (k, seg) in grid.segments().iter().enumerate() {
        let ends_in_jump = k < last;
        for i in 0..=seg.steps {
            if i > 0 {
                pf_propagate(net, ens, k, (seg.node_time(i - 1), seg.node_time(i)))?;
            }
            observer(&EnsembleView {
                segment: k,
                node: i,
                time: seg.node_time(i),
                pre_jump: ends_in_jump && i == seg.steps,
                ensemble: ens,
            })?;
            if i > 0 && i < seg.steps {
                pf_resample_if_degenerate(ens, cfg.resampling, cfg.ess_threshold)?;
            }
        }
        if ends_in_jump {
            let delta = path.delta(k + 1);
            let matching: Vec<usize> = observable
                .iter()
                .copied()
                .filter(|&j| {
                    split
                        .observed
                        .iter()
                        .zip(&delta)
                        .all(|(&i, &d)| net.net(j)[i] == d)
                })
                .collect();
            if matching.is_empty() {
                return Err(PfError::EmptyMatch { t: seg.end, delta });
            }
            pf_jump(net, ens, &matching, TimePoint::new(k, seg.end))?;
            pf_resample(ens, cfg.resampling)?;
        }
    }
    Ok(())
}
