//! Time grids aligned with the observed jump times.
//!
//! `[0, T]` is cut at every observed jump into segments; each segment is
//! split into equal steps of length at most `dt`. Nodes include both ends of
//! every segment, so a jump time appears twice: as the last node of the
//! segment before it (pre-jump) and the first node of the one after.

use serde::{Deserialize, Serialize};

use crate::network::TimePoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSegment {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl GridSegment {
    pub fn step(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            (self.end - self.start) / self.steps as f64
        }
    }

    pub fn node_time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.end
        } else {
            self.start + i as f64 * self.step()
        }
    }
}

/// Number of equal steps of length at most `dt` covering `length`.
pub fn step_count(length: f64, dt: f64) -> usize {
    if length <= 0.0 {
        return 0;
    }
    ((length / dt) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    segments: Vec<GridSegment>,
    offsets: Vec<usize>,
}

impl TimeGrid {
    /// Grid over `[0, horizon]` cut at `jump_times`, with `ceil(L/dt) * refine`
    /// steps per segment of length `L`.
    pub fn from_jumps(jump_times: &[f64], horizon: f64, dt: f64, refine: usize) -> Self {
        let mut bounds = Vec::with_capacity(jump_times.len() + 2);
        bounds.push(0.0);
        bounds.extend_from_slice(jump_times);
        bounds.push(horizon);
        let segments = bounds
            .windows(2)
            .map(|w| GridSegment {
                start: w[0],
                end: w[1],
                steps: step_count(w[1] - w[0], dt) * refine.max(1),
            })
            .collect();
        Self::from_segments(segments)
    }

    pub fn from_segments(segments: Vec<GridSegment>) -> Self {
        let mut offsets = Vec::with_capacity(segments.len() + 1);
        let mut acc = 0;
        for s in &segments {
            offsets.push(acc);
            acc += s.steps + 1;
        }
        offsets.push(acc);
        TimeGrid { segments, offsets }
    }

    pub fn segments(&self) -> &[GridSegment] {
        &self.segments
    }

    pub fn segment(&self, k: usize) -> &GridSegment {
        &self.segments[k]
    }

    /// Total number of nodes over all segments (jump times counted twice).
    pub fn node_count(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn global_node(&self, segment: usize, node: usize) -> usize {
        self.offsets[segment] + node
    }

    /// `(segment, node)` of a global node index.
    pub fn locate(&self, global: usize) -> (usize, usize) {
        let k = match self.offsets.binary_search(&global) {
            Ok(k) => k,
            Err(k) => k - 1,
        };
        let k = k.min(self.segments.len() - 1);
        (k, global - self.offsets[k])
    }

    pub fn node_time(&self, global: usize) -> f64 {
        let (k, i) = self.locate(global);
        self.segments[k].node_time(i)
    }

    /// Segment containing `t`; at a jump time this is the later segment.
    pub fn segment_at(&self, t: f64) -> usize {
        let n = self.segments.len();
        self.segments
            .iter()
            .position(|s| t < s.end)
            .unwrap_or(n - 1)
    }

    /// Node bracket for `at`: `(lower global node, upper global node, fraction)`.
    pub fn bracket(&self, at: TimePoint) -> (usize, usize, f64) {
        let seg = &self.segments[at.segment];
        let base = self.offsets[at.segment];
        if seg.steps == 0 {
            return (base, base, 0.0);
        }
        let u = (at.t - seg.start) / seg.step();
        // tolerate round-off so stage times that land on a node resolve to it
        let i = (u + 1e-9).floor().clamp(0.0, seg.steps as f64) as usize;
        if i >= seg.steps {
            return (base + seg.steps, base + seg.steps, 0.0);
        }
        let frac = (u - i as f64).clamp(0.0, 1.0);
        let frac = if frac < 1e-9 { 0.0 } else { frac };
        (base + i, base + i + 1, frac)
    }
}
