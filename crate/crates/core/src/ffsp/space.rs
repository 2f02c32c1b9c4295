use serde::{Deserialize, Serialize};

use super::FfspError;

/// Default upper limit on the number of states in a truncation box.
pub const DEFAULT_SIZE_CAP: usize = 50_000_000;

/// Box of integer states with a row-major index bijection (last coordinate
/// varies fastest).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncatedSpace {
    lower: Vec<i64>,
    upper: Vec<i64>,
    strides: Vec<usize>,
    size: usize,
}

impl TruncatedSpace {
    pub fn new(lower: Vec<i64>, upper: Vec<i64>) -> Result<Self, FfspError> {
        Self::with_cap(lower, upper, DEFAULT_SIZE_CAP)
    }

    pub fn with_cap(lower: Vec<i64>, upper: Vec<i64>, cap: usize) -> Result<Self, FfspError> {
        if lower.len() != upper.len() {
            return Err(FfspError::Input("bound vectors differ in length".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i] || lower[i] < 0) {
            return Err(FfspError::Input(format!(
                "invalid bounds [{}, {}] in dimension {i}",
                lower[i], upper[i]
            )));
        }
        let size = count_states(&lower, &upper);
        if size > cap as u128 {
            return Err(FfspError::SizeCap { size, cap });
        }
        let size = size as usize;
        let d = lower.len();
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (upper[i + 1] - lower[i + 1] + 1) as usize;
        }
        Ok(TruncatedSpace {
            lower,
            upper,
            strides,
            size,
        })
    }

    /// `[lo, hi]` in every one of `d` dimensions.
    pub fn uniform(d: usize, lo: i64, hi: i64) -> Result<Self, FfspError> {
        Self::new(vec![lo; d], vec![hi; d])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
    pub fn size(&self) -> usize {
        self.size
    }
    pub fn lower(&self) -> &[i64] {
        &self.lower
    }
    pub fn upper(&self) -> &[i64] {
        &self.upper
    }

    #[inline]
    pub fn contains(&self, x: &[i64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    #[inline]
    pub fn index(&self, x: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for i in 0..self.lower.len() {
            let v = x[i];
            if v < self.lower[i] || v > self.upper[i] {
                return None;
            }
            idx += (v - self.lower[i]) as usize * self.strides[i];
        }
        Some(idx)
    }

    #[inline]
    pub fn state_into(&self, mut idx: usize, out: &mut [i64]) {
        for i in 0..self.lower.len() {
            let q = idx / self.strides[i];
            idx -= q * self.strides[i];
            out[i] = self.lower[i] + q as i64;
        }
    }

    pub fn state(&self, idx: usize) -> Vec<i64> {
        let mut out = vec![0; self.dim()];
        self.state_into(idx, &mut out);
        out
    }

    /// Index of `state(idx) + shift`, if it stays inside the box.
    #[inline]
    pub fn shifted(&self, idx: usize, shift: &[i64], buf: &mut [i64]) -> Option<usize> {
        self.state_into(idx, buf);
        for (b, s) in buf.iter_mut().zip(shift) {
            *b += s;
        }
        self.index(buf)
    }

    /// Sub-box over the listed dimensions.
    pub fn project(&self, dims: &[usize]) -> TruncatedSpace {
        TruncatedSpace::with_cap(
            dims.iter().map(|&i| self.lower[i]).collect(),
            dims.iter().map(|&i| self.upper[i]).collect(),
            usize::MAX,
        )
        .expect("sub-box of a valid box")
    }
}

fn count_states(lower: &[i64], upper: &[i64]) -> u128 {
    lower
        .iter()
        .zip(upper)
        .map(|(&lo, &hi)| (hi - lo + 1) as u128)
        .fold(1u128, |acc, n| acc.saturating_mul(n))
}

/// Builds the box `[lower_i, upper_i]`, refusing boxes above `cap` states.
pub fn enumerate_space(bounds: &[(i64, i64)], cap: usize) -> Result<TruncatedSpace, FfspError> {
    TruncatedSpace::with_cap(
        bounds.iter().map(|b| b.0).collect(),
        bounds.iter().map(|b| b.1).collect(),
        cap,
    )
}

/// Number of states of a box without building it (for dry runs).
pub fn box_size(bounds: &[(i64, i64)]) -> u128 {
    count_states(
        &bounds.iter().map(|b| b.0).collect::<Vec<_>>(),
        &bounds.iter().map(|b| b.1).collect::<Vec<_>>(),
    )
}
