use super::{normalized_weights, FfspError, GeneratorOperator, Pmf, TruncatedSpace, UnnormalizedPmf};
use crate::grid::{GridSegment, TimeGrid};
use crate::network::{CoordinateSplit, ReactionNetwork, TimePoint};
use crate::ssa::ObservedPath;

const REBASE_LOW: f64 = 1e-100;
const REBASE_HIGH: f64 = 1e100;
const NEGATIVE_TOL: f64 = 1e-8;
/// Largest `h * max exit rate` taken in one RK4 step; the real-axis
/// stability limit of RK4 is about 2.78.
const STABLE_STEP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FfspConfig {
    /// Maximum RK4 step.
    pub dt: f64,
    /// Extra equal substeps per step; snapshots are emitted at every substep.
    pub refine: usize,
}

impl FfspConfig {
    pub fn new(dt: f64) -> Self {
        FfspConfig { dt, refine: 1 }
    }
}

/// Solver state handed to observers at every grid node.
#[derive(Debug)]
pub struct Snapshot<'a> {
    pub segment: usize,
    pub node: usize,
    pub time: f64,
    /// Last node of a segment that ends in an observed jump (the `t_k^-` value).
    pub pre_jump: bool,
    pub weights: &'a [f64],
    pub log_norm: f64,
    /// Boundary leak accumulated so far.
    pub leak: f64,
}

impl Snapshot<'_> {
    pub fn normalized(&self) -> Result<Vec<f64>, FfspError> {
        normalized_weights(self.weights, self.time)
    }
}

#[derive(Debug, Clone)]
pub struct FfspRun {
    pub last: UnnormalizedPmf,
    /// Log of the total unnormalized mass at the horizon.
    pub log_likelihood: f64,
    /// Accumulated fraction of conditional mass lost through the box boundary.
    pub leak: f64,
}

/// RK4 integrator of the filtering equations on a fixed box.
pub struct FilterSolver {
    split: CoordinateSplit,
    op: GeneratorOperator,
    observable: Vec<usize>,
    observed_nets: Vec<Vec<i64>>,
    stage: [Vec<f64>; 4],
    tmp: Vec<f64>,
    filled: Option<(usize, Vec<i64>)>,
    leak: f64,
}

impl FilterSolver {
    pub fn new<N: ReactionNetwork + ?Sized>(
        net: &N,
        split: CoordinateSplit,
        space: &TruncatedSpace,
    ) -> Result<Self, FfspError> {
        if split.hidden.len() != space.dim() {
            return Err(FfspError::Input(format!(
                "box has {} dimensions but {} hidden species",
                space.dim(),
                split.hidden.len()
            )));
        }
        if split.dim() != net.species_count() {
            return Err(FfspError::Input("coordinate split does not cover the network".into()));
        }
        let op = GeneratorOperator::new(net, &split, space);
        let observed_nets = (0..net.reaction_count())
            .map(|j| split.observed.iter().map(|&i| net.net(j)[i]).collect())
            .collect::<Vec<Vec<i64>>>();
        let observable = (0..net.reaction_count())
            .filter(|j| observed_nets[*j].iter().any(|&v| v != 0))
            .collect();
        let n = space.size();
        Ok(FilterSolver {
            split,
            op,
            observable,
            observed_nets,
            stage: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
            filled: None,
            leak: 0.0,
        })
    }

    pub fn size(&self) -> usize {
        self.op.size()
    }

    pub fn leak(&self) -> f64 {
        self.leak
    }

    pub fn operator(&self) -> &GeneratorOperator {
        &self.op
    }

    /// Observable reactions whose observed change equals `delta`.
    pub fn matching(&self, delta: &[i64]) -> Vec<usize> {
        self.observable
            .iter()
            .copied()
            .filter(|&j| self.observed_nets[j] == delta)
            .collect()
    }

    fn fill<N: ReactionNetwork + ?Sized>(&mut self, net: &N, y: &[i64], at: TimePoint) {
        if !net.time_dependent() {
            if let Some((seg, fy)) = &self.filled {
                if *seg == at.segment && fy == y {
                    return;
                }
            }
            self.filled = Some((at.segment, y.to_vec()));
        }
        self.op.fill_rates(net, &self.split, y, at);
    }

    fn rk4_step<N: ReactionNetwork + ?Sized>(
        &mut self,
        net: &N,
        y: &[i64],
        segment: usize,
        t: f64,
        h: f64,
        rho: &mut [f64],
    ) {
        let td = net.time_dependent();
        self.fill(net, y, TimePoint::new(segment, t));
        let total: f64 = rho.iter().sum();
        if total > 0.0 {
            self.leak += h * self.op.boundary_outflow(rho) / total;
        }
        let [k1, k2, k3, k4] = &mut self.stage;
        self.op.apply(rho, k1);
        for ((o, r), k) in self.tmp.iter_mut().zip(rho.iter()).zip(k1.iter()) {
            *o = r + 0.5 * h * k;
        }
        if td {
            self.op.fill_rates(net, &self.split, y, TimePoint::new(segment, t + 0.5 * h));
        }
        self.op.apply(&self.tmp, k2);
        for ((o, r), k) in self.tmp.iter_mut().zip(rho.iter()).zip(k2.iter()) {
            *o = r + 0.5 * h * k;
        }
        self.op.apply(&self.tmp, k3);
        for ((o, r), k) in self.tmp.iter_mut().zip(rho.iter()).zip(k3.iter()) {
            *o = r + h * k;
        }
        if td {
            self.op.fill_rates(net, &self.split, y, TimePoint::new(segment, t + h));
        }
        self.op.apply(&self.tmp, k4);
        let c = h / 6.0;
        for i in 0..rho.len() {
            rho[i] += c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    fn settle(rho: &mut UnnormalizedPmf) -> Result<(), FfspError> {
        let mut max = 0.0f64;
        let mut min = 0.0f64;
        for &w in &rho.weights {
            max = max.max(w);
            min = min.min(w);
        }
        if min < -NEGATIVE_TOL * max.max(f64::MIN_POSITIVE) || !max.is_finite() {
            return Err(FfspError::StepUnstable { t: rho.time });
        }
        if min < 0.0 {
            rho.weights.iter_mut().for_each(|w| *w = w.max(0.0));
        }
        if max == 0.0 {
            return Err(FfspError::ZeroMass { t: rho.time });
        }
        if !(REBASE_LOW..=REBASE_HIGH).contains(&max) {
            rho.rebase()?;
        }
        Ok(())
    }

    /// Integrates over one grid segment at observed value `y`, calling
    /// `observer` at every node including both ends.
    pub fn advance<N: ReactionNetwork + ?Sized>(
        &mut self,
        net: &N,
        y: &[i64],
        segment: usize,
        seg: &GridSegment,
        ends_in_jump: bool,
        rho: &mut UnnormalizedPmf,
        observer: &mut dyn FnMut(&Snapshot),
    ) -> Result<(), FfspError> {
        let emit = |rho: &UnnormalizedPmf, node: usize, leak: f64, observer: &mut dyn FnMut(&Snapshot)| {
            observer(&Snapshot {
                segment,
                node,
                time: rho.time,
                pre_jump: ends_in_jump && node == seg.steps,
                weights: &rho.weights,
                log_norm: rho.log_norm,
                leak,
            })
        };
        rho.time = seg.start;
        emit(rho, 0, self.leak, observer);
        let h = seg.step();
        for i in 0..seg.steps {
            let t = seg.node_time(i);
            self.fill(net, y, TimePoint::new(segment, t));
            let sub = (h * self.op.max_outflow() / STABLE_STEP).ceil().max(1.0) as usize;
            let hs = h / sub as f64;
            for s in 0..sub {
                self.rk4_step(net, y, segment, t + s as f64 * hs, hs, &mut rho.weights);
            }
            rho.time = seg.node_time(i + 1);
            Self::settle(rho)?;
            emit(rho, i + 1, self.leak, observer);
        }
        Ok(())
    }

    /// Applies the observed jump `delta` at the end of `segment`, with
    /// propensities taken at the pre-jump value `y_prev`.
    pub fn jump<N: ReactionNetwork + ?Sized>(
        &mut self,
        net: &N,
        delta: &[i64],
        y_prev: &[i64],
        pre: TimePoint,
        rho: &mut UnnormalizedPmf,
    ) -> Result<(), FfspError> {
        let matching = self.matching(delta);
        if matching.is_empty() {
            return Err(FfspError::EmptyMatch {
                t: pre.t,
                delta: delta.to_vec(),
            });
        }
        self.jump_with(net, &matching, y_prev, pre, rho)
    }

    pub fn jump_with<N: ReactionNetwork + ?Sized>(
        &mut self,
        net: &N,
        matching: &[usize],
        y_prev: &[i64],
        pre: TimePoint,
        rho: &mut UnnormalizedPmf,
    ) -> Result<(), FfspError> {
        self.fill(net, y_prev, pre);
        self.op.apply_jump(matching, &rho.weights, &mut self.tmp);
        std::mem::swap(&mut rho.weights, &mut self.tmp);
        rho.time = pre.t;
        if rho.weights.iter().all(|&w| w <= 0.0) {
            return Err(FfspError::ZeroMass { t: pre.t });
        }
        rho.rebase()
    }
}

/// Runs the filter along `path` on `grid` starting from `pi0`.
pub fn ffsp_filter_on_grid<N: ReactionNetwork + ?Sized>(
    net: &N,
    split: &CoordinateSplit,
    space: &TruncatedSpace,
    path: &ObservedPath,
    pi0: &Pmf,
    grid: &TimeGrid,
    observer: &mut dyn FnMut(&Snapshot),
) -> Result<FfspRun, FfspError> {
    let mut solver = FilterSolver::new(net, split.clone(), space)?;
    if pi0.probs.len() != space.size() {
        return Err(FfspError::Input("initial PMF does not match the box".into()));
    }
    let mut rho = UnnormalizedPmf::new(pi0.probs.clone(), 0.0);
    let last = grid.segments().len() - 1;
    for (k, seg) in grid.segments().iter().enumerate() {
        let y = path.value_on_segment(k);
        solver.advance(net, y, k, seg, k < last, &mut rho, observer)?;
        if k < last {
            let delta = path.delta(k + 1);
            solver.jump(net, &delta, y, TimePoint::new(k, seg.end), &mut rho)?;
        }
    }
    Ok(FfspRun {
        log_likelihood: rho.log_mass(),
        leak: solver.leak(),
        last: rho,
    })
}

/// FFSP filter: alternates inter-jump integration and jump updates along the
/// observed path, reporting every grid node to `observer`.
pub fn ffsp_filter<N: ReactionNetwork + ?Sized>(
    net: &N,
    split: &CoordinateSplit,
    space: &TruncatedSpace,
    path: &ObservedPath,
    pi0: &Pmf,
    cfg: &FfspConfig,
    observer: &mut dyn FnMut(&Snapshot),
) -> Result<FfspRun, FfspError> {
    path.check().map_err(|e| FfspError::Input(e.to_string()))?;
    let grid = TimeGrid::from_jumps(&path.jump_times, path.horizon, cfg.dt, cfg.refine);
    ffsp_filter_on_grid(net, split, space, path, pi0, &grid, observer)
}

/// Inter-jump integration over `[t0, t1]` at observed value `y`; returns the
/// unnormalized PMF at every step node.
pub fn filter_interjump<N: ReactionNetwork + ?Sized>(
    net: &N,
    split: &CoordinateSplit,
    space: &TruncatedSpace,
    rho: &UnnormalizedPmf,
    y: &[i64],
    (t0, t1): (f64, f64),
    dt: f64,
) -> Result<Vec<UnnormalizedPmf>, FfspError> {
    let mut solver = FilterSolver::new(net, split.clone(), space)?;
    let seg = GridSegment {
        start: t0,
        end: t1,
        steps: crate::grid::step_count(t1 - t0, dt),
    };
    let mut out = Vec::with_capacity(seg.steps + 1);
    let mut state = rho.clone();
    solver.advance(net, y, 0, &seg, false, &mut state, &mut |s| {
        out.push(UnnormalizedPmf {
            weights: s.weights.to_vec(),
            log_norm: s.log_norm,
            time: s.time,
        })
    })?;
    Ok(out)
}

/// Jump update for the reactions `matching` at pre-jump observed value `y_prev`.
pub fn filter_jump<N: ReactionNetwork + ?Sized>(
    net: &N,
    split: &CoordinateSplit,
    space: &TruncatedSpace,
    rho_minus: &UnnormalizedPmf,
    matching: &[usize],
    y_prev: &[i64],
    pre: TimePoint,
) -> Result<UnnormalizedPmf, FfspError> {
    if matching.is_empty() {
        return Err(FfspError::Input("empty set of matching reactions".into()));
    }
    let mut solver = FilterSolver::new(net, split.clone(), space)?;
    let mut rho = rho_minus.clone();
    solver.jump_with(net, matching, y_prev, pre, &mut rho)?;
    Ok(rho)
}

/// Truncated CME solution: raw probabilities at each node and the mass lost
/// through the boundary (`1 - sum p`).
#[derive(Debug, Clone)]
pub struct CmeSolution {
    pub times: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
    pub leaked: Vec<f64>,
}

impl CmeSolution {
    pub fn last(&self) -> &[f64] {
        self.probs.last().expect("at least the initial node")
    }
}

/// Solves the truncated CME with fixed-step RK4, every species treated as a
/// box coordinate.
pub fn solve_cme<N: ReactionNetwork + ?Sized>(
    net: &N,
    space: &TruncatedSpace,
    p0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<CmeSolution, FfspError> {
    let grid = TimeGrid::from_jumps(&[], horizon, dt, 1);
    let mut out = CmeSolution {
        times: Vec::new(),
        probs: Vec::new(),
        leaked: Vec::new(),
    };
    solve_cme_grid(net, space, p0, &grid, &mut |t, p| {
        out.times.push(t);
        out.leaked.push(1.0 - p.iter().sum::<f64>());
        out.probs.push(p.to_vec());
    })?;
    Ok(out)
}

/// CME on an arbitrary single-segment grid, reporting `(t, p)` at each node.
pub fn solve_cme_grid<N: ReactionNetwork + ?Sized>(
    net: &N,
    space: &TruncatedSpace,
    p0: &[f64],
    grid: &TimeGrid,
    observer: &mut dyn FnMut(f64, &[f64]),
) -> Result<(), FfspError> {
    if grid.segments().len() != 1 {
        return Err(FfspError::Input("CME grids have a single segment".into()));
    }
    let split = CoordinateSplit::all_hidden(net.species_count());
    let mut solver = FilterSolver::new(net, split, space)?;
    let mut rho = UnnormalizedPmf::new(p0.to_vec(), 0.0);
    let mut buf = Vec::with_capacity(p0.len());
    solver.advance(net, &[], 0, grid.segment(0), false, &mut rho, &mut |s| {
        let scale = s.log_norm.exp();
        buf.clear();
        buf.extend(s.weights.iter().map(|w| w * scale));
        observer(s.time, &buf);
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ffsp::normalize;
    use crate::model::{Reaction, SrnModel};

    fn single(reactions: Vec<Reaction>, d: usize) -> SrnModel {
        SrnModel::new((0..d).map(|i| format!("S{i}")).collect(), reactions).unwrap()
    }

    #[test]
    fn no_reactions_keep_rho_constant() {
        let m = single(vec![], 2);
        let space = TruncatedSpace::uniform(1, 0, 5).unwrap();
        let split = CoordinateSplit::new(vec![0], vec![1]);
        let rho = UnnormalizedPmf::new(vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.1], 0.0);
        let out = filter_interjump(&m, &split, &space, &rho, &[0], (0.0, 1.0), 0.1).unwrap();
        for s in &out {
            assert_eq!(s.weights, rho.weights);
        }
    }

    #[test]
    fn observed_constant_rate_decays_exponentially() {
        // hidden X, observed Y; the only reaction is 0 -> Y at constant rate c
        let c = 1.7;
        let m = single(vec![Reaction::new(vec![0, 0], vec![0, 1], c)], 2);
        let space = TruncatedSpace::uniform(1, 0, 3).unwrap();
        let split = CoordinateSplit::new(vec![0], vec![1]);
        let w0 = vec![0.4, 0.3, 0.2, 0.1];
        let rho = UnnormalizedPmf::new(w0.clone(), 0.0);
        let out = filter_interjump(&m, &split, &space, &rho, &[0], (0.0, 2.0), 0.01).unwrap();
        let last = out.last().unwrap();
        let scale = last.log_norm.exp();
        for (w, w0) in last.weights.iter().zip(&w0) {
            let expect = w0 * (-c * 2.0f64).exp();
            assert!((w * scale - expect).abs() < 1e-10, "{} vs {}", w * scale, expect);
        }
    }

    #[test]
    fn mass_never_increases_between_jumps() {
        let m = single(
            vec![
                Reaction::new(vec![0, 0], vec![1, 0], 4.0),
                Reaction::new(vec![1, 0], vec![0, 0], 1.0),
                Reaction::new(vec![1, 0], vec![1, 1], 0.5),
            ],
            2,
        );
        let space = TruncatedSpace::uniform(1, 0, 15).unwrap();
        let split = CoordinateSplit::new(vec![0], vec![1]);
        let rho = UnnormalizedPmf::new(Pmf::point_mass(16, 0, 0.0).probs, 0.0);
        let out = filter_interjump(&m, &split, &space, &rho, &[0], (0.0, 3.0), 0.05).unwrap();
        let masses: Vec<f64> = out.iter().map(|r| r.log_mass()).collect();
        assert!(masses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn jump_with_constant_rate_is_a_shift() {
        // observed reaction X -> X + Y is state independent only through X>=0; use 0 -> X + Y
        let m = single(vec![Reaction::new(vec![0, 0], vec![1, 1], 2.0)], 2);
        let space = TruncatedSpace::uniform(1, 0, 4).unwrap();
        let split = CoordinateSplit::new(vec![0], vec![1]);
        let rho = UnnormalizedPmf::new(vec![0.5, 0.25, 0.25, 0.0, 0.0], 1.0);
        let out = filter_jump(&m, &split, &space, &rho, &[0], &[0], TimePoint::new(0, 1.0)).unwrap();
        let p = normalize(&out).unwrap();
        assert_eq!(p.probs, vec![0.0, 0.5, 0.25, 0.25, 0.0]);
    }

    #[test]
    fn jump_requiring_copies_from_empty_state_is_zero_mass() {
        // X -> Y needs one X; all mass at X = 0
        let m = single(vec![Reaction::new(vec![1, 0], vec![0, 1], 1.0)], 2);
        let space = TruncatedSpace::uniform(1, 0, 4).unwrap();
        let split = CoordinateSplit::new(vec![0], vec![1]);
        let rho = UnnormalizedPmf::new(Pmf::point_mass(5, 0, 0.0).probs, 0.0);
        let err = filter_jump(&m, &split, &space, &rho, &[0], &[0], TimePoint::new(0, 0.5));
        assert!(matches!(err, Err(FfspError::ZeroMass { .. })));
    }

    #[test]
    fn jump_invariant_to_scaling() {
        let m = single(
            vec![
                Reaction::new(vec![1, 0], vec![0, 1], 1.0),
                Reaction::new(vec![0, 0], vec![1, 1], 0.3),
            ],
            2,
        );
        let space = TruncatedSpace::uniform(1, 0, 6).unwrap();
        let split = CoordinateSplit::new(vec![0], vec![1]);
        let w = vec![0.1, 0.3, 0.2, 0.15, 0.1, 0.1, 0.05];
        let a = UnnormalizedPmf::new(w.clone(), 0.0);
        let b = UnnormalizedPmf::new(w.iter().map(|v| v * 37.5).collect(), 0.0);
        let at = TimePoint::new(0, 0.0);
        let pa = normalize(&filter_jump(&m, &split, &space, &a, &[0, 1], &[2], at).unwrap()).unwrap();
        let pb = normalize(&filter_jump(&m, &split, &space, &b, &[0, 1], &[2], at).unwrap()).unwrap();
        for (x, y) in pa.probs.iter().zip(&pb.probs) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn cme_with_zero_rates_is_static() {
        let m = single(vec![Reaction::new(vec![1], vec![0], 0.0)], 1);
        let space = TruncatedSpace::uniform(1, 0, 4).unwrap();
        let p0 = vec![0.2; 5];
        let sol = solve_cme(&m, &space, &p0, 1.0, 0.1).unwrap();
        assert_eq!(sol.last(), p0.as_slice());
    }

    #[test]
    fn cme_birth_death_mean() {
        let m = single(
            vec![Reaction::new(vec![0], vec![1], 10.0), Reaction::new(vec![1], vec![0], 1.0)],
            1,
        );
        let space = TruncatedSpace::uniform(1, 0, 60).unwrap();
        let sol = solve_cme(&m, &space, &Pmf::point_mass(61, 0, 0.0).probs, 1.0, 0.01).unwrap();
        let mean: f64 = sol.last().iter().enumerate().map(|(i, p)| i as f64 * p).sum();
        let exact = 10.0 * (1.0 - (-1.0f64).exp());
        assert!((mean - exact).abs() < 1e-4, "mean {mean} vs {exact}");
        assert!(sol.leaked.last().unwrap().abs() < 1e-10);
    }

    #[test]
    fn rk4_order_on_smooth_segment() {
        let m = single(
            vec![
                Reaction::new(vec![0, 0], vec![1, 0], 3.0),
                Reaction::new(vec![1, 0], vec![0, 0], 1.0),
                Reaction::new(vec![1, 0], vec![1, 1], 0.4),
            ],
            2,
        );
        let space = TruncatedSpace::uniform(1, 0, 20).unwrap();
        let split = CoordinateSplit::new(vec![0], vec![1]);
        let rho = UnnormalizedPmf::new(Pmf::point_mass(21, 0, 0.0).probs, 0.0);
        let solve = |dt: f64| {
            let out = filter_interjump(&m, &split, &space, &rho, &[0], (0.0, 1.0), dt).unwrap();
            let last = out.last().unwrap().clone();
            let s = last.log_norm.exp();
            last.weights.iter().map(|w| w * s).collect::<Vec<_>>()
        };
        let reference = solve(0.001);
        let err = |dt: f64| {
            solve(dt)
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        };
        let e1 = err(0.05);
        let e2 = err(0.025);
        let order = (e1 / e2).log2();
        assert!(order >= 3.5, "observed order {order}");
    }
}
