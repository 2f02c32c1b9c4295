//! Truncated-state-space solvers.
//!
//! The same machinery solves two problems:
//! - the chemical master equation on a box (everything hidden, nothing
//!   observed), used as an oracle;
//! - the exact-observation filtering equations for the unnormalized
//!   conditional PMF: a linear ODE between observed jumps and a reweighting
//!   shift at each jump.
//!
//! Both the full network and projected networks go through
//! [`ReactionNetwork`](crate::network::ReactionNetwork), so the projected
//! filters reuse this code unchanged.

mod operator;
mod solver;
mod space;

pub use operator::GeneratorOperator;
pub use solver::{
    ffsp_filter, ffsp_filter_on_grid, filter_interjump, filter_jump, solve_cme, solve_cme_grid, CmeSolution,
    FfspConfig, FfspRun, FilterSolver, Snapshot,
};
pub use space::{box_size, enumerate_space, TruncatedSpace, DEFAULT_SIZE_CAP};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::InitialDistribution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FfspError {
    #[error("truncated space has {size} states, above the cap of {cap}")]
    SizeCap { size: u128, cap: usize },
    #[error("RK4 step produced a negative weight at t={t}; reduce dt")]
    StepUnstable { t: f64 },
    #[error("all probability mass vanished at t={t}; the truncation excludes every state consistent with the observations")]
    ZeroMass { t: f64 },
    #[error("no observable reaction matches the observed jump {delta:?} at t={t}")]
    EmptyMatch { t: f64, delta: Vec<i64> },
    #[error("{0}")]
    Input(String),
}

/// Weights proportional to a PMF, with the scale kept in `log_norm`:
/// the represented measure is `weights * exp(log_norm)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnnormalizedPmf {
    pub weights: Vec<f64>,
    pub log_norm: f64,
    pub time: f64,
}

impl UnnormalizedPmf {
    pub fn new(weights: Vec<f64>, time: f64) -> Self {
        UnnormalizedPmf {
            weights,
            log_norm: 0.0,
            time,
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Log of the total represented mass.
    pub fn log_mass(&self) -> f64 {
        self.total().ln() + self.log_norm
    }

    /// Moves the total mass into `log_norm` so the weights sum to one.
    pub fn rebase(&mut self) -> Result<(), FfspError> {
        let s = self.total();
        if !(s > 0.0) || !s.is_finite() {
            return Err(FfspError::ZeroMass { t: self.time });
        }
        let inv = 1.0 / s;
        self.weights.iter_mut().for_each(|w| *w *= inv);
        self.log_norm += s.ln();
        Ok(())
    }
}

/// Normalized probabilities over a truncated space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    pub probs: Vec<f64>,
    pub time: f64,
}

impl Pmf {
    pub fn point_mass(size: usize, at: usize, time: f64) -> Self {
        let mut probs = vec![0.0; size];
        probs[at] = 1.0;
        Pmf { probs, time }
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// `pi(x) = rho(x) / sum rho`.
pub fn normalize(rho: &UnnormalizedPmf) -> Result<Pmf, FfspError> {
    Ok(Pmf {
        probs: normalized_weights(&rho.weights, rho.time)?,
        time: rho.time,
    })
}

pub(crate) fn normalized_weights(w: &[f64], t: f64) -> Result<Vec<f64>, FfspError> {
    let s: f64 = w.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(FfspError::ZeroMass { t });
    }
    Ok(w.iter().map(|v| v / s).collect())
}

/// Initial filter PMF over `space`, whose dimensions are the model species
/// `species`. With a product-form initial law, conditioning on Y(0) leaves
/// the hidden marginals unchanged. Mass outside the box is dropped and the
/// remainder renormalized.
pub fn initial_pmf(
    mu: &InitialDistribution,
    species: &[usize],
    space: &TruncatedSpace,
) -> Result<Pmf, FfspError> {
    let mut buf = vec![0; space.dim()];
    let probs: Vec<f64> = (0..space.size())
        .map(|i| {
            space.state_into(i, &mut buf);
            mu.prob_coords(species, &buf)
        })
        .collect();
    Ok(Pmf {
        probs: normalized_weights(&probs, 0.0)?,
        time: 0.0,
    })
}

/// Mean and variance of every coordinate of `space` under `probs`.
pub fn moments(space: &TruncatedSpace, probs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = space.dim();
    let mut m1 = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    let mut buf = vec![0; d];
    for (i, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        space.state_into(i, &mut buf);
        for k in 0..d {
            let v = buf[k] as f64;
            m1[k] += p * v;
            m2[k] += p * v * v;
        }
    }
    let var = m1.iter().zip(&m2).map(|(a, b)| (b - a * a).max(0.0)).collect();
    (m1, var)
}
