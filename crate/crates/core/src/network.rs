//! The reaction-network abstraction shared by the solvers.
//!
//! The full model has time-independent propensities; projected models look
//! theirs up in tables indexed by time. Solvers only need the interface
//! below, so both kinds run through the same FFSP and simulation code.

use crate::model::SrnModel;

/// A time on the observation grid. `segment` identifies the inter-jump
/// interval, which disambiguates the two sides of a jump time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePoint {
    pub segment: usize,
    pub t: f64,
}

impl TimePoint {
    pub fn new(segment: usize, t: f64) -> Self {
        TimePoint { segment, t }
    }
}

pub trait ReactionNetwork: Sync {
    fn species_count(&self) -> usize;
    fn reaction_count(&self) -> usize;
    /// Net change of reaction `j` over all species of this network.
    fn net(&self, j: usize) -> &[i64];
    fn rate(&self, j: usize, z: &[i64], at: TimePoint) -> f64;
    /// Like [`rate`](Self::rate) but `None` where no value is defined.
    fn try_rate(&self, j: usize, z: &[i64], at: TimePoint) -> Option<f64> {
        Some(self.rate(j, z, at))
    }
    fn time_dependent(&self) -> bool {
        false
    }
}

impl ReactionNetwork for SrnModel {
    fn species_count(&self) -> usize {
        self.species.len()
    }
    fn reaction_count(&self) -> usize {
        self.reactions.len()
    }
    fn net(&self, j: usize) -> &[i64] {
        &self.reactions[j].net
    }
    #[inline]
    fn rate(&self, j: usize, z: &[i64], _at: TimePoint) -> f64 {
        self.reactions[j].propensity(z)
    }
}

/// Which coordinates of a network are hidden (solved for) and which are
/// observed (held at the observed value).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordinateSplit {
    pub hidden: Vec<usize>,
    pub observed: Vec<usize>,
}

impl CoordinateSplit {
    pub fn new(hidden: Vec<usize>, observed: Vec<usize>) -> Self {
        CoordinateSplit { hidden, observed }
    }

    /// Everything hidden, nothing observed: the plain CME setting.
    pub fn all_hidden(d: usize) -> Self {
        CoordinateSplit {
            hidden: (0..d).collect(),
            observed: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.hidden.len() + self.observed.len()
    }

    /// Writes `x` and `y` into their slots of `z`.
    #[inline]
    pub fn assemble_into(&self, x: &[i64], y: &[i64], z: &mut [i64]) {
        for (&i, &v) in self.hidden.iter().zip(x) {
            z[i] = v;
        }
        for (&i, &v) in self.observed.iter().zip(y) {
            z[i] = v;
        }
    }

    pub fn hidden_part(&self, v: &[i64]) -> Vec<i64> {
        self.hidden.iter().map(|&i| v[i]).collect()
    }

    pub fn observed_part(&self, v: &[i64]) -> Vec<i64> {
        self.observed.iter().map(|&i| v[i]).collect()
    }
}
