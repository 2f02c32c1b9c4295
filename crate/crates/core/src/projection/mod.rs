//! Markovian projections onto the interest and observed species.
//!
//! A projected network keeps every reaction with a nonzero net change on
//! `z' = (x', y)`. Reactions whose propensity only reads `z'` keep their
//! mass-action form; the others get a table of estimated conditional means:
//! unconditional ones (`E[a_j(Z(t)) | Z'(t) = z']`) for the UMP filter, or
//! ones conditioned on the observed path (`E[a_j(X(t), y(t)) | X'(t) = x', Y_{[0,t]}]`)
//! for the CMP filter.

mod estimate;
mod table;

pub use estimate::{
    cmp_slice, conditional_slice, exact_filter_tables, exact_unconditional_tables,
    ump_estimate, UmpDomain, CMP_DELTA, UMP_MIN_SUPPORT,
};
pub use table::{
    affine_fit, extrapolate, AffineFit, Interpolation, PropensityTable, RawCell, TableKey,
    TableSlice,
};

use thiserror::Error;

use crate::model::{mass_action, project_stoichiometry, SrnModel, StatePartition};
use crate::network::{CoordinateSplit, ReactionNetwork, TimePoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("no reliable cell in a table slice")]
    AllUnreliable,
    #[error("no table for reaction {0}, whose propensity depends on nuisance species")]
    MissingTable(usize),
    #[error(transparent)]
    Sim(#[from] crate::ssa::SimError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropensityKind {
    Analytic,
    NeedsTable,
}

/// A reaction's propensity is analytic on the projection when every species
/// it consumes is kept.
pub fn detect_analytic(model: &SrnModel, partition: &StatePartition, j: usize) -> PropensityKind {
    let kept = partition.projected();
    let r = &model.reactions[j];
    let analytic = r
        .consumed
        .iter()
        .enumerate()
        .all(|(i, &c)| c == 0 || kept.contains(&i));
    if analytic {
        PropensityKind::Analytic
    } else {
        PropensityKind::NeedsTable
    }
}

/// Reactions of the projected network that need a table.
pub fn table_reactions(model: &SrnModel, partition: &StatePartition) -> Vec<usize> {
    project_stoichiometry(model, partition)
        .iter()
        .map(|p| p.reaction)
        .filter(|&j| detect_analytic(model, partition, j) == PropensityKind::NeedsTable)
        .collect()
}

#[derive(Debug, Clone)]
pub enum PropensitySource {
    /// Mass-action on the projected coordinates.
    Analytic { rate: f64, consumed: Vec<u32> },
    Table(usize),
}

/// Reduced network on `z' = (x', y)`, ordered as `partition.projected()`.
#[derive(Debug, Clone)]
pub struct ProjectedModel {
    pub species: Vec<String>,
    /// Original reaction index of each projected reaction.
    pub origin: Vec<usize>,
    nets: Vec<Vec<i64>>,
    pub sources: Vec<PropensitySource>,
    pub tables: Vec<PropensityTable>,
    interest_dim: usize,
}

/// Assembles the projected network. `tables` must contain one table for
/// every reaction that is not analytic; extra tables are ignored.
pub fn build_projected_model(
    model: &SrnModel,
    partition: &StatePartition,
    tables: Vec<PropensityTable>,
) -> Result<ProjectedModel, ProjectionError> {
    let kept = partition.projected();
    let mut sources = Vec::new();
    let mut origin = Vec::new();
    let mut nets = Vec::new();
    for p in project_stoichiometry(model, partition) {
        let j = p.reaction;
        let src = match detect_analytic(model, partition, j) {
            PropensityKind::Analytic => PropensitySource::Analytic {
                rate: model.reactions[j].rate,
                consumed: kept.iter().map(|&i| model.reactions[j].consumed[i]).collect(),
            },
            PropensityKind::NeedsTable => {
                let t = tables
                    .iter()
                    .position(|t| t.reaction == j)
                    .ok_or(ProjectionError::MissingTable(j))?;
                PropensitySource::Table(t)
            }
        };
        sources.push(src);
        origin.push(j);
        nets.push(p.net);
    }
    Ok(ProjectedModel {
        species: kept.iter().map(|&i| model.species[i].clone()).collect(),
        origin,
        nets,
        sources,
        tables,
        interest_dim: partition.interest().len(),
    })
}

impl ProjectedModel {
    pub fn interest_dim(&self) -> usize {
        self.interest_dim
    }

    /// Split of the projected coordinates: interest hidden, the rest observed.
    pub fn split(&self) -> CoordinateSplit {
        CoordinateSplit::new(
            (0..self.interest_dim).collect(),
            (self.interest_dim..self.species.len()).collect(),
        )
    }

    pub fn table_for(&self, reaction: usize) -> Option<&PropensityTable> {
        self.tables.iter().find(|t| t.reaction == reaction)
    }

    pub fn table_for_mut(&mut self, reaction: usize) -> Option<&mut PropensityTable> {
        self.tables.iter_mut().find(|t| t.reaction == reaction)
    }

    fn source_rate(&self, j: usize, z: &[i64], at: TimePoint) -> Option<f64> {
        match &self.sources[j] {
            PropensitySource::Analytic { rate, consumed } => Some(mass_action(*rate, consumed, z)),
            PropensitySource::Table(t) => {
                let table = &self.tables[*t];
                // the propensity vanishes where the reaction would leave the orthant
                if z.iter().zip(&self.nets[j]).any(|(&v, &n)| v + n < 0) {
                    return Some(0.0);
                }
                match table.key {
                    TableKey::Interest => table.lookup(&z[..self.interest_dim], at),
                    TableKey::Projected => table.lookup(z, at),
                }
            }
        }
    }
}

impl ReactionNetwork for ProjectedModel {
    fn species_count(&self) -> usize {
        self.species.len()
    }
    fn reaction_count(&self) -> usize {
        self.nets.len()
    }
    fn net(&self, j: usize) -> &[i64] {
        &self.nets[j]
    }
    fn rate(&self, j: usize, z: &[i64], at: TimePoint) -> f64 {
        self.source_rate(j, z, at).unwrap_or(0.0)
    }
    fn try_rate(&self, j: usize, z: &[i64], at: TimePoint) -> Option<f64> {
        self.source_rate(j, z, at)
    }
    fn time_dependent(&self) -> bool {
        !self.tables.is_empty()
            && self
                .sources
                .iter()
                .any(|s| matches!(s, PropensitySource::Table(_)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Reaction;

    fn cascade(d: usize) -> SrnModel {
        let mut r = vec![Reaction::new(vec![0; d], unit(d, 0), 10.0)];
        for i in 1..d {
            r.push(Reaction::new(unit(d, i - 1), unit(d, i), 5.0));
        }
        for i in 0..d {
            r.push(Reaction::new(unit(d, i), vec![0; d], 1.0));
        }
        SrnModel::new((1..=d).map(|i| format!("S{i}")).collect(), r).unwrap()
    }

    fn unit(d: usize, i: usize) -> Vec<u32> {
        let mut v = vec![0; d];
        v[i] = 1;
        v
    }

    #[test]
    fn cascade_classification() {
        let m = cascade(5);
        let p = StatePartition::from_names(&m, &["S1"], &["S5"]).unwrap();
        assert_eq!(detect_analytic(&m, &p, 5), PropensityKind::Analytic); // S1 -> 0
        assert_eq!(detect_analytic(&m, &p, 1), PropensityKind::Analytic); // S1 -> S2
        assert_eq!(detect_analytic(&m, &p, 4), PropensityKind::NeedsTable); // S4 -> S5
        assert_eq!(table_reactions(&m, &p), vec![4]);
    }

    #[test]
    fn projected_cascade_keeps_identical_projections_apart() {
        let m = cascade(5);
        let p = StatePartition::from_names(&m, &["S1"], &["S5"]).unwrap();
        let err = build_projected_model(&m, &p, vec![]).unwrap_err();
        assert_eq!(err, ProjectionError::MissingTable(4));
        let nets: Vec<Vec<i64>> = project_stoichiometry(&m, &p).into_iter().map(|s| s.net).collect();
        assert_eq!(
            nets,
            vec![vec![1, 0], vec![-1, 0], vec![0, 1], vec![-1, 0], vec![0, -1]]
        );
    }

    #[test]
    fn identity_projection_is_all_analytic() {
        let m = cascade(3);
        let p = StatePartition::from_names(&m, &["S1", "S2"], &["S3"]).unwrap();
        let pm = build_projected_model(&m, &p, vec![]).unwrap();
        assert!(!pm.time_dependent());
        let z = [3, 2, 4];
        for (k, &j) in pm.origin.iter().enumerate() {
            assert_eq!(pm.rate(k, &z, TimePoint::new(0, 0.0)), m.propensity(j, &z));
        }
    }
}
