use proptest::prelude::*;
use srnfilter_core::ffsp::{initial_pmf, TruncatedSpace};
use srnfilter_core::filters::{run_cmp, run_reference, run_ump, FilterConfig, Method};
use srnfilter_core::grid::TimeGrid;
use srnfilter_core::model::{InitialDistribution, Reaction, SrnModel, StatePartition};
use srnfilter_core::projection::{exact_unconditional_tables, ump_estimate, Interpolation, UmpDomain};
use srnfilter_core::ssa::{extract_observation, ssa_simulate, ObservedPath};

fn r(c: [u32; 3], p: [u32; 3], rate: f64) -> Reaction {
    Reaction::new(c.to_vec(), p.to_vec(), rate)
}

fn toy() -> (SrnModel, StatePartition, InitialDistribution) {
    let m = SrnModel::new(
        vec!["A".into(), "B".into(), "C".into()],
        vec![
            r([0, 0, 0], [1, 0, 0], 2.0),
            r([1, 0, 0], [0, 0, 0], 0.5),
            r([1, 0, 0], [0, 1, 0], 1.0),
            r([0, 1, 0], [0, 0, 0], 0.5),
            r([0, 1, 0], [0, 0, 1], 1.0),
            r([0, 0, 1], [0, 0, 0], 0.5),
        ],
    )
    .unwrap();
    let p = StatePartition::from_names(&m, &["A"], &["C"]).unwrap();
    let mu = InitialDistribution::deterministic(&[1, 0, 0]).unwrap();
    (m, p, mu)
}

fn path(m: &SrnModel, p: &StatePartition, seed: u64) -> ObservedPath {
    (seed..)
        .map(|s| extract_observation(&ssa_simulate(m, &[1, 0, 0], 2.0, s).unwrap(), p))
        .find(|path| path.jump_count() >= 2)
        .unwrap()
}

#[test]
fn sampled_unconditional_tables_approach_exact_ones() {
    let (m, p, mu) = toy();
    let full = TruncatedSpace::new(vec![0, 0, 0], vec![16, 16, 16]).unwrap();
    let proj = full.project(&p.projected());
    let grid = TimeGrid::from_jumps(&[], 1.0, 0.02, 1);
    let p0 = initial_pmf(&mu, &[0, 1, 2], &full).unwrap();
    let exact = exact_unconditional_tables(&m, &p, &full, &p0.probs, &grid, &proj, Interpolation::Constant).unwrap();
    let est = ump_estimate(&m, &p, &mu, 40_000, &grid, UmpDomain::Box(&proj), Interpolation::Constant, 4).unwrap();
    assert_eq!(exact.len(), 1);
    let (e, s) = (&exact[0], &est[0]);
    let node = 50;
    let slice = s.slice(node).unwrap();
    let mut compared = 0;
    for i in 0..proj.size() {
        if slice.support[i] < 2000.0 {
            continue;
        }
        let key = proj.state(i);
        let a = e.value_at(node, &key).unwrap();
        let b = s.value_at(node, &key).unwrap();
        assert!((a - b).abs() < 0.1 * a.max(0.2), "{key:?}: exact {a}, sampled {b}");
        compared += 1;
    }
    assert!(compared >= 3);
}

#[test]
fn cmp_converges_to_the_reference() {
    let (m, p, mu) = toy();
    let path = path(&m, &p, 1);
    let cfg = FilterConfig::new(Method::FullFfsp, 1, 0.01, vec![(0, 16), (0, 16)], 9);
    let reference = run_reference(&m, &p, &mu, &path, &cfg).unwrap();
    let l1 = |m_: usize| {
        let c = run_cmp(&m, &p, &mu, &path, &FilterConfig { method: Method::Cmp, m: m_, ..cfg.clone() }).unwrap();
        c.final_pmf().iter().zip(reference.final_pmf()).map(|(a, b)| (a - b).abs()).sum::<f64>()
    };
    let coarse = l1(200);
    let fine = l1(20_000);
    assert!(fine < 0.03, "L1 at M=20000: {fine}");
    assert!(fine < coarse, "{fine} !< {coarse}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn every_emitted_pmf_is_normalized(seed in 0u64..1000, method in 0usize..3) {
        let (m, p, mu) = toy();
        let path = path(&m, &p, seed);
        let method = [Method::Pf, Method::Ump, Method::Cmp][method];
        let cfg = FilterConfig::new(method, 300, 0.02, vec![(0, 16), (0, 16)], seed);
        let res = match method {
            Method::Ump => run_ump(&m, &p, &mu, &path, &cfg),
            Method::Cmp => run_cmp(&m, &p, &mu, &path, &cfg),
            _ => run_reference(&m, &p, &mu, &path, &cfg),
        };
        // a filter may legitimately collapse; it must then say so
        if let Ok(res) = res {
            prop_assert_eq!(res.times.first().copied(), Some(0.0));
            prop_assert!((res.times.last().unwrap() - path.horizon).abs() < 1e-12);
            for pmf in &res.pmfs {
                let s: f64 = pmf.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-10, "mass {}", s);
                prop_assert!(pmf.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
