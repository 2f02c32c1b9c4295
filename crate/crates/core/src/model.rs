//! Reaction networks, species partitions and initial distributions.
//!
//! A network is a list of species and a list of reactions. Each reaction
//! carries its consumed and produced molecule counts and a rate constant;
//! propensities follow mass-action kinetics. The [`StatePartition`] splits
//! species into hidden-of-interest, hidden-nuisance and observed groups,
//! which in turn splits reactions into observable and unobservable ones.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("no observable reaction produces the observed jump {0:?}")]
    EmptyMatch(Vec<i64>),
    #[error("invalid initial distribution: {0}")]
    Initial(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// A single problem found by [`SrnModel::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateSpecies(String),
    NegativeRate { reaction: usize },
    NonFiniteRate { reaction: usize },
    LengthMismatch { reaction: usize },
    NetMismatch { reaction: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateSpecies(name) => write!(f, "duplicate species name `{name}`"),
            Violation::NegativeRate { reaction } => {
                write!(f, "negative rate constant (reaction {reaction})")
            }
            Violation::NonFiniteRate { reaction } => {
                write!(f, "non-finite rate constant (reaction {reaction})")
            }
            Violation::LengthMismatch { reaction } => {
                write!(f, "stoichiometry length mismatch (reaction {reaction})")
            }
            Violation::NetMismatch { reaction } => {
                write!(f, "net vector differs from produced - consumed (reaction {reaction})")
            }
        }
    }
}

/// Propensity law of a reaction. Only mass action is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Kinetics {
    #[default]
    MassAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub consumed: Vec<u32>,
    pub produced: Vec<u32>,
    pub net: Vec<i64>,
    pub rate: f64,
    pub kinetics: Kinetics,
}

impl Reaction {
    pub fn new(consumed: Vec<u32>, produced: Vec<u32>, rate: f64) -> Self {
        let net = produced
            .iter()
            .zip(&consumed)
            .map(|(&p, &c)| p as i64 - c as i64)
            .collect();
        Reaction {
            consumed,
            produced,
            net,
            rate,
            kinetics: Kinetics::MassAction,
        }
    }

    /// Propensity at state `z` (full species order).
    #[inline]
    pub fn propensity(&self, z: &[i64]) -> f64 {
        match self.kinetics {
            Kinetics::MassAction => mass_action(self.rate, &self.consumed, z),
        }
    }
}

/// `rate * prod_i z_i! / (z_i - c_i)!`, zero when any `z_i < c_i`.
///
/// The falling factorial is accumulated term by term so large copy numbers
/// never go through a full factorial.
#[inline]
pub fn mass_action(rate: f64, consumed: &[u32], z: &[i64]) -> f64 {
    let mut a = rate;
    for (&c, &zi) in consumed.iter().zip(z) {
        if c == 0 {
            continue;
        }
        if zi < c as i64 {
            return 0.0;
        }
        for k in 0..c as i64 {
            a *= (zi - k) as f64;
        }
    }
    a
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrnModel {
    pub species: Vec<String>,
    pub reactions: Vec<Reaction>,
}

impl SrnModel {
    /// Builds a model and rejects it if [`validate`](Self::validate) finds anything.
    pub fn new(species: Vec<String>, reactions: Vec<Reaction>) -> Result<Self, ModelError> {
        let model = SrnModel { species, reactions };
        model.validate().map_err(ModelError::Invalid)?;
        Ok(model)
    }

    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn reaction_count(&self) -> usize {
        self.reactions.len()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    #[inline]
    pub fn propensity(&self, j: usize, z: &[i64]) -> f64 {
        self.reactions[j].propensity(z)
    }

    /// Checks every structural invariant and reports all violations found.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for name in &self.species {
            if !seen.insert(name.as_str()) {
                out.push(Violation::DuplicateSpecies(name.clone()));
            }
        }
        let d = self.species.len();
        for (j, r) in self.reactions.iter().enumerate() {
            if !r.rate.is_finite() {
                out.push(Violation::NonFiniteRate { reaction: j });
            } else if r.rate < 0.0 {
                out.push(Violation::NegativeRate { reaction: j });
            }
            if r.consumed.len() != d || r.produced.len() != d || r.net.len() != d {
                out.push(Violation::LengthMismatch { reaction: j });
                continue;
            }
            let consistent = r
                .net
                .iter()
                .zip(r.produced.iter().zip(&r.consumed))
                .all(|(&n, (&p, &c))| n == p as i64 - c as i64);
            if !consistent {
                out.push(Violation::NetMismatch { reaction: j });
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}

/// Free-function form of [`SrnModel::validate`].
pub fn validate_model(model: &SrnModel) -> Result<(), Vec<Violation>> {
    model.validate()
}

/// Split of the species into hidden-of-interest (X'), hidden nuisance (X'')
/// and observed (Y), plus the induced observable/unobservable reaction sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePartition {
    interest: Vec<usize>,
    nuisance: Vec<usize>,
    observed: Vec<usize>,
    observable: Vec<usize>,
    unobservable: Vec<usize>,
}

impl StatePartition {
    pub fn new(
        model: &SrnModel,
        interest: Vec<usize>,
        nuisance: Vec<usize>,
        observed: Vec<usize>,
    ) -> Result<Self, ModelError> {
        let d = model.species_count();
        let mut seen = vec![false; d];
        for &i in interest.iter().chain(&nuisance).chain(&observed) {
            if i >= d {
                return Err(ModelError::Partition(format!("species index {i} out of range")));
            }
            if seen[i] {
                return Err(ModelError::Partition(format!(
                    "species `{}` assigned twice",
                    model.species[i]
                )));
            }
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(ModelError::Partition(format!(
                "species `{}` not assigned",
                model.species[i]
            )));
        }
        let (observable, unobservable) = split_reactions(model, &observed);
        Ok(StatePartition {
            interest,
            nuisance,
            observed,
            observable,
            unobservable,
        })
    }

    /// Partition from species names. Species not named as interest or
    /// observed become nuisance, in model order.
    pub fn from_names(
        model: &SrnModel,
        interest: &[&str],
        observed: &[&str],
    ) -> Result<Self, ModelError> {
        let lookup = |n: &&str| {
            model
                .species_index(n)
                .ok_or_else(|| ModelError::Partition(format!("unknown species `{n}`")))
        };
        let interest: Vec<usize> = interest.iter().map(lookup).collect::<Result<_, _>>()?;
        let observed: Vec<usize> = observed.iter().map(lookup).collect::<Result<_, _>>()?;
        let nuisance = (0..model.species_count())
            .filter(|i| !interest.contains(i) && !observed.contains(i))
            .collect();
        Self::new(model, interest, nuisance, observed)
    }

    pub fn interest(&self) -> &[usize] {
        &self.interest
    }
    pub fn nuisance(&self) -> &[usize] {
        &self.nuisance
    }
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }
    pub fn observable_reactions(&self) -> &[usize] {
        &self.observable
    }
    pub fn unobservable_reactions(&self) -> &[usize] {
        &self.unobservable
    }

    /// Hidden species in filter order: interest first, then nuisance.
    pub fn hidden(&self) -> Vec<usize> {
        self.interest.iter().chain(&self.nuisance).copied().collect()
    }

    /// Species kept by the projection: interest first, then observed.
    pub fn projected(&self) -> Vec<usize> {
        self.interest.iter().chain(&self.observed).copied().collect()
    }

    pub fn observed_slice(&self, v: &[i64]) -> Vec<i64> {
        self.observed.iter().map(|&i| v[i]).collect()
    }
}

fn split_reactions(model: &SrnModel, observed: &[usize]) -> (Vec<usize>, Vec<usize>) {
    (0..model.reaction_count()).partition(|&j| {
        let net = &model.reactions[j].net;
        observed.iter().any(|&i| net[i] != 0)
    })
}

/// Observable (O) and unobservable (U) reaction index sets.
pub fn classify_reactions(model: &SrnModel, partition: &StatePartition) -> (Vec<usize>, Vec<usize>) {
    split_reactions(model, partition.observed())
}

/// Observable reactions whose observed net change equals `delta_y`.
pub fn matching_reactions(
    model: &SrnModel,
    partition: &StatePartition,
    delta_y: &[i64],
) -> Result<Vec<usize>, ModelError> {
    let found: Vec<usize> = partition
        .observable_reactions()
        .iter()
        .copied()
        .filter(|&j| {
            let net = &model.reactions[j].net;
            partition
                .observed()
                .iter()
                .zip(delta_y)
                .all(|(&i, &dy)| net[i] == dy)
        })
        .collect();
    if found.is_empty() {
        Err(ModelError::EmptyMatch(delta_y.to_vec()))
    } else {
        Ok(found)
    }
}

/// A reaction that survives projection onto the interest and observed species.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectedStoichiometry {
    pub reaction: usize,
    /// Net change over `partition.projected()` coordinates.
    pub net: Vec<i64>,
}

/// Restricts every net vector to X' and Y, dropping reactions that become null.
pub fn project_stoichiometry(
    model: &SrnModel,
    partition: &StatePartition,
) -> Vec<ProjectedStoichiometry> {
    let keep = partition.projected();
    model
        .reactions
        .iter()
        .enumerate()
        .filter_map(|(j, r)| {
            let net: Vec<i64> = keep.iter().map(|&i| r.net[i]).collect();
            net.iter()
                .any(|&v| v != 0)
                .then_some(ProjectedStoichiometry { reaction: j, net })
        })
        .collect()
}

/// Per-species initial law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Marginal {
    Deterministic(i64),
    Categorical { support: Vec<i64>, probs: Vec<f64> },
}

impl Marginal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        match self {
            Marginal::Deterministic(v) => *v,
            Marginal::Categorical { support, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (s, p) in support.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *s;
                    }
                }
                *support.last().expect("non-empty support")
            }
        }
    }

    /// Probability of the value `v`.
    pub fn prob(&self, v: i64) -> f64 {
        match self {
            Marginal::Deterministic(x) => f64::from(u8::from(*x == v)),
            Marginal::Categorical { support, probs } => support
                .iter()
                .zip(probs)
                .filter(|(s, _)| **s == v)
                .map(|(_, p)| p)
                .sum(),
        }
    }
}

/// Product of independent per-species marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistribution {
    pub marginals: Vec<Marginal>,
}

impl InitialDistribution {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self, ModelError> {
        for (i, m) in marginals.iter().enumerate() {
            match m {
                Marginal::Deterministic(v) if *v < 0 => {
                    return Err(ModelError::Initial(format!("species {i}: negative value")))
                }
                Marginal::Categorical { support, probs } => {
                    if support.is_empty() || support.len() != probs.len() {
                        return Err(ModelError::Initial(format!(
                            "species {i}: support and probs must be non-empty and equal length"
                        )));
                    }
                    if support.iter().any(|&s| s < 0) || probs.iter().any(|&p| !(p >= 0.0)) {
                        return Err(ModelError::Initial(format!(
                            "species {i}: negative support value or probability"
                        )));
                    }
                    let total: f64 = probs.iter().sum();
                    if (total - 1.0).abs() > 1e-12 {
                        return Err(ModelError::Initial(format!(
                            "species {i}: probabilities sum to {total}"
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(InitialDistribution { marginals })
    }

    pub fn deterministic(z0: &[i64]) -> Result<Self, ModelError> {
        Self::new(z0.iter().map(|&v| Marginal::Deterministic(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i64> {
        self.marginals.iter().map(|m| m.sample(rng)).collect()
    }

    /// Draw restricted to a subset of species (in the given order).
    pub fn sample_coords<R: Rng + ?Sized>(&self, coords: &[usize], rng: &mut R) -> Vec<i64> {
        coords.iter().map(|&i| self.marginals[i].sample(rng)).collect()
    }

    /// Joint probability of `values` on the species `coords`. Under the
    /// product form this is also the law conditional on any other species.
    pub fn prob_coords(&self, coords: &[usize], values: &[i64]) -> f64 {
        coords
            .iter()
            .zip(values)
            .map(|(&i, &v)| self.marginals[i].prob(v))
            .product()
    }

    /// Most likely value of each species in `coords`; used as y(0) when the
    /// observed species start deterministic.
    pub fn mode_coords(&self, coords: &[usize]) -> Vec<i64> {
        coords
            .iter()
            .map(|&i| match &self.marginals[i] {
                Marginal::Deterministic(v) => *v,
                Marginal::Categorical { support, probs } => {
                    let k = probs
                        .iter()
                        .enumerate()
                        .fold(0, |best, (k, p)| if *p > probs[best] { k } else { best });
                    support[k]
                }
            })
            .collect()
    }
}
