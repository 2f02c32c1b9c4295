use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ProjectionError;
use crate::ffsp::TruncatedSpace;
use crate::grid::TimeGrid;
use crate::network::TimePoint;

/// How a table is indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableKey {
    /// By the interest coordinates `x'` only (conditional tables).
    Interest,
    /// By the full projected state `z' = (x', y)` (unconditional tables).
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Constant,
    Linear,
}

/// Affine function `c0 + sum_i c_i key[i]`; dropped coordinates have `c_i = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl AffineFit {
    pub fn constant(c: f64, dim: usize) -> Self {
        AffineFit {
            intercept: c,
            slopes: vec![0.0; dim],
        }
    }

    pub fn eval(&self, key: &[i64]) -> f64 {
        self.intercept
            + self
                .slopes
                .iter()
                .zip(key)
                .map(|(c, &x)| c * x as f64)
                .sum::<f64>()
    }
}

/// Raw estimator output at one key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawCell {
    pub value: f64,
    /// Sample count or weight share.
    pub support: f64,
    pub reliable: bool,
}

/// Table values at one grid node. Cells cover `free` (a box over the
/// leading key coordinates) with the trailing coordinates fixed to `fixed`.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSlice {
    pub fixed: Vec<i64>,
    pub values: Vec<f64>,
    pub reliable: Vec<bool>,
    pub support: Vec<f64>,
    pub fit: Option<AffineFit>,
    /// Values copied from an earlier slice because none were reliable.
    pub carried: bool,
}

impl TableSlice {
    pub fn reliable_fraction(&self) -> f64 {
        if self.reliable.is_empty() {
            return 0.0;
        }
        self.reliable.iter().filter(|r| **r).count() as f64 / self.reliable.len() as f64
    }
}

/// Least-squares affine fit over `points`. Coordinates that do not vary are
/// dropped; a still-singular system falls back to the mean.
pub fn affine_fit(points: &[(Vec<i64>, f64)], dim: usize) -> Option<AffineFit> {
    if points.is_empty() {
        return None;
    }
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let active: Vec<usize> = (0..dim)
        .filter(|&i| points.iter().any(|p| p.0[i] != points[0].0[i]))
        .collect();
    if active.is_empty() {
        return Some(AffineFit::constant(mean, dim));
    }
    let p = active.len() + 1;
    let mut a = vec![vec![0.0; p + 1]; p];
    for (key, v) in points {
        let mut row = Vec::with_capacity(p);
        row.push(1.0);
        row.extend(active.iter().map(|&i| key[i] as f64));
        for r in 0..p {
            for c in 0..p {
                a[r][c] += row[r] * row[c];
            }
            a[r][p] += row[r] * v;
        }
    }
    match solve_dense(a) {
        Some(beta) => {
            let mut slopes = vec![0.0; dim];
            for (k, &i) in active.iter().enumerate() {
                slopes[i] = beta[k + 1];
            }
            Some(AffineFit {
                intercept: beta[0],
                slopes,
            })
        }
        None => Some(AffineFit::constant(mean, dim)),
    }
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    let scale = a
        .iter()
        .flat_map(|r| r[..n].iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-10 * scale {
            return None;
        }
        a.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..=n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][n] - s) / a[r][r];
    }
    Some(x)
}

/// Fills a slice from raw cells: reliable cells keep their raw value, the
/// rest take the affine fit over all reliable cells, clamped at zero.
pub fn extrapolate(
    cells: &BTreeMap<Vec<i64>, RawCell>,
    free: &TruncatedSpace,
    fixed: &[i64],
) -> Result<TableSlice, ProjectionError> {
    let dim = free.dim() + fixed.len();
    let points: Vec<(Vec<i64>, f64)> = cells
        .iter()
        .filter(|(_, c)| c.reliable)
        .map(|(k, c)| (k.clone(), c.value))
        .collect();
    let fit = affine_fit(&points, dim).ok_or(ProjectionError::AllUnreliable)?;
    let n = free.size();
    let mut slice = TableSlice {
        fixed: fixed.to_vec(),
        values: vec![0.0; n],
        reliable: vec![false; n],
        support: vec![0.0; n],
        fit: Some(fit),
        carried: false,
    };
    let mut key = vec![0i64; dim];
    for i in 0..n {
        free.state_into(i, &mut key[..free.dim()]);
        key[free.dim()..].copy_from_slice(fixed);
        match cells.get(&key) {
            Some(c) if c.reliable => {
                slice.values[i] = c.value;
                slice.reliable[i] = true;
                slice.support[i] = c.support;
            }
            other => {
                slice.values[i] = slice.fit.as_ref().map_or(0.0, |f| f.eval(&key).max(0.0));
                slice.support[i] = other.map_or(0.0, |c| c.support);
            }
        }
    }
    Ok(slice)
}

/// Estimated projected propensity of one reaction on a grid of times.
#[derive(Debug, Clone)]
pub struct PropensityTable {
    pub reaction: usize,
    pub key: TableKey,
    /// Box over the key coordinates that vary within a slice.
    pub free: TruncatedSpace,
    pub grid: TimeGrid,
    pub interpolation: Interpolation,
    slices: Vec<Option<TableSlice>>,
}

impl PropensityTable {
    pub fn new(
        reaction: usize,
        key: TableKey,
        free: TruncatedSpace,
        grid: TimeGrid,
        interpolation: Interpolation,
    ) -> Self {
        let n = grid.node_count();
        PropensityTable {
            reaction,
            key,
            free,
            grid,
            interpolation,
            slices: vec![None; n],
        }
    }

    pub fn slice(&self, node: usize) -> Option<&TableSlice> {
        self.slices.get(node).and_then(|s| s.as_ref())
    }

    pub fn slices(&self) -> impl Iterator<Item = (usize, &TableSlice)> {
        self.slices
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (i, s)))
    }

    /// Stores the slice for `node`. An `AllUnreliable` result copies the
    /// closest earlier slice.
    pub fn set_slice(
        &mut self,
        node: usize,
        slice: Result<TableSlice, ProjectionError>,
    ) -> Result<(), ProjectionError> {
        let slice = match slice {
            Ok(s) => s,
            Err(ProjectionError::AllUnreliable) => {
                let prev = self.slices[..node]
                    .iter()
                    .rev()
                    .flatten()
                    .next()
                    .ok_or(ProjectionError::AllUnreliable)?;
                let mut s = prev.clone();
                s.carried = true;
                s.reliable.iter_mut().for_each(|r| *r = false);
                s
            }
            Err(e) => return Err(e),
        };
        self.slices[node] = Some(slice);
        Ok(())
    }

    /// Value at `key` on one slice.
    pub fn value_at(&self, node: usize, key: &[i64]) -> Option<f64> {
        let s = self.slice(node)?;
        let d = self.free.dim();
        if key[d..] == s.fixed[..] {
            if let Some(i) = self.free.index(&key[..d]) {
                return Some(s.values[i]);
            }
        }
        s.fit.as_ref().map(|f| f.eval(key).max(0.0))
    }

    /// Value at `key` and time `at`, piecewise constant or linear in time.
    pub fn lookup(&self, key: &[i64], at: TimePoint) -> Option<f64> {
        let (lo, hi, frac) = self.grid.bracket(at);
        let a = self.value_at(lo, key)?;
        match self.interpolation {
            Interpolation::Linear if frac > 0.0 && hi != lo => {
                let b = self.value_at(hi, key)?;
                Some((1.0 - frac) * a + frac * b)
            }
            _ => Some(a),
        }
    }

    /// Fraction of filled cells that are reliable, over all stored slices.
    pub fn reliable_fraction(&self) -> f64 {
        let (mut r, mut n) = (0usize, 0usize);
        for (_, s) in self.slices() {
            r += s.reliable.iter().filter(|v| **v).count();
            n += s.reliable.len();
        }
        if n == 0 {
            0.0
        } else {
            r as f64 / n as f64
        }
    }

    pub fn carried_slices(&self) -> usize {
        self.slices().filter(|(_, s)| s.carried).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cells(entries: &[(i64, f64, bool)]) -> BTreeMap<Vec<i64>, RawCell> {
        entries
            .iter()
            .map(|&(x, v, r)| {
                (
                    vec![x],
                    RawCell {
                        value: v,
                        support: 1.0,
                        reliable: r,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn affine_cells_extend_exactly() {
        let c = cells(&[(1, 3.0, true), (2, 5.0, true), (4, 9.0, true), (6, 100.0, false)]);
        let free = TruncatedSpace::uniform(1, 0, 7).unwrap();
        let s = extrapolate(&c, &free, &[]).unwrap();
        for x in 0..=7 {
            let expect = 1.0 + 2.0 * x as f64;
            assert!((s.values[x] - expect).abs() < 1e-12, "x={x}");
        }
        assert!(s.reliable[1] && !s.reliable[6]);
    }

    #[test]
    fn single_reliable_cell_is_constant_fill() {
        let c = cells(&[(3, 2.5, true), (4, 7.0, false)]);
        let free = TruncatedSpace::uniform(1, 0, 5).unwrap();
        let s = extrapolate(&c, &free, &[]).unwrap();
        assert!(s.values.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn negative_fit_is_clamped() {
        let c = cells(&[(5, 1.0, true), (6, 3.0, true)]);
        let free = TruncatedSpace::uniform(1, 0, 8).unwrap();
        let s = extrapolate(&c, &free, &[]).unwrap();
        assert_eq!(s.values[0], 0.0);
        assert_eq!(s.values[4], 0.0);
        assert!((s.values[8] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn no_reliable_cell_is_an_error() {
        let c = cells(&[(1, 2.0, false)]);
        let free = TruncatedSpace::uniform(1, 0, 2).unwrap();
        assert_eq!(extrapolate(&c, &free, &[]), Err(ProjectionError::AllUnreliable));
    }

    #[test]
    fn degenerate_dimension_is_dropped() {
        // every reliable cell has y = 4, so only x is fitted
        let mut c = BTreeMap::new();
        for x in 0..3 {
            c.insert(
                vec![x, 4],
                RawCell {
                    value: 2.0 * x as f64 + 1.0,
                    support: 10.0,
                    reliable: true,
                },
            );
        }
        let fit = affine_fit(
            &c.iter().map(|(k, v)| (k.clone(), v.value)).collect::<Vec<_>>(),
            2,
        )
        .unwrap();
        assert_eq!(fit.slopes[1], 0.0);
        assert!((fit.eval(&[5, 9]) - 11.0).abs() < 1e-12);
    }

    #[test]
    fn carried_slice_copies_values() {
        let grid = TimeGrid::from_jumps(&[], 1.0, 0.5, 1);
        let free = TruncatedSpace::uniform(1, 0, 2).unwrap();
        let mut t = PropensityTable::new(0, TableKey::Interest, free.clone(), grid, Interpolation::Constant);
        let first = extrapolate(&cells(&[(1, 4.0, true)]), &free, &[]);
        t.set_slice(0, first).unwrap();
        t.set_slice(1, Err(ProjectionError::AllUnreliable)).unwrap();
        assert!(t.slice(1).unwrap().carried);
        assert_eq!(t.value_at(1, &[2]), Some(4.0));
        assert_eq!(t.carried_slices(), 1);
        let mut fresh = PropensityTable::new(
            0,
            TableKey::Interest,
            free,
            TimeGrid::from_jumps(&[], 1.0, 0.5, 1),
            Interpolation::Constant,
        );
        assert!(fresh.set_slice(0, Err(ProjectionError::AllUnreliable)).is_err());
    }

    #[test]
    fn linear_interpolation_between_nodes() {
        let grid = TimeGrid::from_jumps(&[], 1.0, 1.0, 1);
        let free = TruncatedSpace::uniform(1, 0, 0).unwrap();
        let mut t = PropensityTable::new(0, TableKey::Interest, free.clone(), grid, Interpolation::Linear);
        t.set_slice(0, extrapolate(&cells(&[(0, 2.0, true)]), &free, &[])).unwrap();
        t.set_slice(1, extrapolate(&cells(&[(0, 4.0, true)]), &free, &[])).unwrap();
        assert_eq!(t.lookup(&[0], TimePoint::new(0, 0.25)), Some(2.5));
        t.interpolation = Interpolation::Constant;
        assert_eq!(t.lookup(&[0], TimePoint::new(0, 0.25)), Some(2.0));
        assert_eq!(t.lookup(&[0], TimePoint::new(0, 1.0)), Some(4.0));
    }

    proptest! {
        #[test]
        fn filled_values_are_nonnegative(
            vals in proptest::collection::vec((0i64..10, 0.0f64..50.0, any::<bool>()), 1..12)
        ) {
            let c = cells(&vals);
            let free = TruncatedSpace::uniform(1, 0, 12).unwrap();
            if let Ok(s) = extrapolate(&c, &free, &[]) {
                prop_assert!(s.values.iter().all(|&v| v >= 0.0));
                for (k, cell) in &c {
                    if cell.reliable {
                        prop_assert_eq!(s.values[k[0] as usize], cell.value);
                    }
                }
            }
        }
    }
}
