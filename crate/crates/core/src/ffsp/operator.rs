use rayon::prelude::*;

use super::TruncatedSpace;
use crate::network::{CoordinateSplit, ReactionNetwork, TimePoint};

const NONE: u32 = u32::MAX;
const PAR_CHUNK: usize = 4096;

/// Shift-and-scale stencil of the truncated filtering right-hand side
///
/// ```text
/// d rho(x)/dt = sum_{j in U} a_j(x - nu_j) rho(x - nu_j) - sum_j a_j(x) rho(x)
/// ```
///
/// with propensities evaluated at a fixed observed value. Source states that
/// fall outside the box contribute nothing, so mass only leaves through the
/// boundary. With nothing observed, `U` is every reaction and this is the
/// truncated CME generator.
#[derive(Debug, Clone)]
pub struct GeneratorOperator {
    n: usize,
    reactions: usize,
    /// `src[j][i]`: index of `x_i - nu_{x,j}`, or `NONE` outside the box.
    src: Vec<Vec<u32>>,
    /// `exits[j][i]`: `x_i + nu_{x,j}` leaves the box.
    exits: Vec<Vec<bool>>,
    unobservable: Vec<usize>,
    /// State-major: `rates[i * reactions + j]`.
    rates: Vec<f64>,
    outflow: Vec<f64>,
    states: Vec<i64>,
    hidden_dim: usize,
}

impl GeneratorOperator {
    pub fn new<N: ReactionNetwork + ?Sized>(
        net: &N,
        split: &CoordinateSplit,
        space: &TruncatedSpace,
    ) -> Self {
        let n = space.size();
        let jr = net.reaction_count();
        let dh = space.dim();
        let hidden_nets: Vec<Vec<i64>> = (0..jr)
            .map(|j| split.hidden.iter().map(|&i| net.net(j)[i]).collect())
            .collect();
        let unobservable = (0..jr)
            .filter(|&j| split.observed.iter().all(|&i| net.net(j)[i] == 0))
            .collect();
        let mut states = vec![0i64; n * dh];
        states
            .par_chunks_mut(dh.max(1))
            .enumerate()
            .for_each(|(i, s)| space.state_into(i, s));
        let src = hidden_nets
            .iter()
            .map(|nu| {
                let back: Vec<i64> = nu.iter().map(|v| -v).collect();
                shift_map(space, &back)
            })
            .collect();
        let exits = hidden_nets
            .iter()
            .map(|nu| shift_map(space, nu).into_iter().map(|s| s == NONE).collect())
            .collect();
        GeneratorOperator {
            n,
            reactions: jr,
            src,
            exits,
            unobservable,
            rates: vec![0.0; n * jr],
            outflow: vec![0.0; n],
            states,
            hidden_dim: dh,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn unobservable(&self) -> &[usize] {
        &self.unobservable
    }

    /// Evaluates every propensity at every box state with the observed
    /// coordinates held at `y`.
    pub fn fill_rates<N: ReactionNetwork + ?Sized>(
        &mut self,
        net: &N,
        split: &CoordinateSplit,
        y: &[i64],
        at: TimePoint,
    ) {
        let jr = self.reactions;
        let dh = self.hidden_dim;
        let d = split.dim();
        let states = &self.states;
        self.rates
            .par_chunks_mut(jr.max(1) * PAR_CHUNK)
            .zip(self.outflow.par_chunks_mut(PAR_CHUNK))
            .enumerate()
            .for_each(|(c, (rates, out))| {
                let mut z = vec![0i64; d];
                for (k, o) in out.iter_mut().enumerate() {
                    let i = c * PAR_CHUNK + k;
                    split.assemble_into(&states[i * dh..(i + 1) * dh], y, &mut z);
                    let mut total = 0.0;
                    for j in 0..jr {
                        let a = net.rate(j, &z, at);
                        rates[k * jr + j] = a;
                        total += a;
                    }
                    *o = total;
                }
            });
    }

    /// Largest total exit rate over the box, the diagonal of the generator.
    pub fn max_outflow(&self) -> f64 {
        self.outflow.iter().copied().fold(0.0, f64::max)
    }

    #[inline]
    pub fn rate(&self, j: usize, i: usize) -> f64 {
        self.rates[i * self.reactions + j]
    }

    /// `out = A rho` for the filtering generator.
    pub fn apply(&self, rho: &[f64], out: &mut [f64]) {
        let jr = self.reactions;
        let body = |c: usize, chunk: &mut [f64]| {
            for (k, o) in chunk.iter_mut().enumerate() {
                let i = c * PAR_CHUNK + k;
                let mut acc = -self.outflow[i] * rho[i];
                for &j in &self.unobservable {
                    let s = self.src[j][i];
                    if s != NONE {
                        let s = s as usize;
                        acc += self.rates[s * jr + j] * rho[s];
                    }
                }
                *o = acc;
            }
        };
        if self.n >= 2 * PAR_CHUNK {
            out.par_chunks_mut(PAR_CHUNK)
                .enumerate()
                .for_each(|(c, chunk)| body(c, chunk));
        } else {
            out.chunks_mut(PAR_CHUNK)
                .enumerate()
                .for_each(|(c, chunk)| body(c, chunk));
        }
    }

    /// Jump update `out(x) = (1/|O_k|) sum_{j in O_k} a_j(x - nu_j) rho(x - nu_j)`.
    pub fn apply_jump(&self, matching: &[usize], rho: &[f64], out: &mut [f64]) {
        let jr = self.reactions;
        let scale = 1.0 / matching.len() as f64;
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = 0.0;
            for &j in matching {
                let s = self.src[j][i];
                if s != NONE {
                    let s = s as usize;
                    acc += self.rates[s * jr + j] * rho[s];
                }
            }
            *o = acc * scale;
        });
    }

    /// Rate at which probability `p` leaves the box through unobservable reactions.
    pub fn boundary_outflow(&self, p: &[f64]) -> f64 {
        let jr = self.reactions;
        self.unobservable
            .iter()
            .map(|&j| {
                self.exits[j]
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e)
                    .map(|(i, _)| self.rates[i * jr + j] * p[i])
                    .sum::<f64>()
            })
            .sum()
    }
}

fn shift_map(space: &TruncatedSpace, shift: &[i64]) -> Vec<u32> {
    let dh = space.dim();
    (0..space.size())
        .into_par_iter()
        .map_init(
            || vec![0i64; dh],
            |buf, i| space.shifted(i, shift, buf).map_or(NONE, |s| s as u32),
        )
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Reaction, SrnModel};

    #[test]
    fn interior_columns_conserve_mass() {
        // A <-> B with a source and a dimerisation, pure CME
        let m = SrnModel::new(
            vec!["A".into(), "B".into()],
            vec![
                Reaction::new(vec![0, 0], vec![1, 0], 3.0),
                Reaction::new(vec![1, 0], vec![0, 1], 1.0),
                Reaction::new(vec![0, 1], vec![1, 0], 0.5),
                Reaction::new(vec![2, 0], vec![0, 1], 0.1),
                Reaction::new(vec![0, 1], vec![0, 0], 0.7),
            ],
        )
        .unwrap();
        let space = TruncatedSpace::uniform(2, 0, 12).unwrap();
        let split = CoordinateSplit::all_hidden(2);
        let mut op = GeneratorOperator::new(&m, &split, &space);
        op.fill_rates(&m, &split, &[], TimePoint::new(0, 0.0));
        let mut e = vec![0.0; space.size()];
        let mut out = vec![0.0; space.size()];
        for c in 0..space.size() {
            let x = space.state(c);
            let interior = m.reactions.iter().all(|r| {
                let y: Vec<i64> = x.iter().zip(&r.net).map(|(a, b)| a + b).collect();
                r.propensity(&x) == 0.0 || space.contains(&y)
            });
            if !interior {
                continue;
            }
            e.fill(0.0);
            e[c] = 1.0;
            op.apply(&e, &mut out);
            let s: f64 = out.iter().sum();
            assert!(s.abs() < 1e-12, "column {c} sums to {s}");
        }
    }
}
