use srnfilter_core::grid::TimeGrid;
use srnfilter_core::model::{Reaction, SrnModel};
use srnfilter_core::ssa::{mnrm_simulate, ssa_simulate};
use statrs::distribution::{Discrete, Poisson};

fn birth_death() -> SrnModel {
    SrnModel::new(
        vec!["S".into()],
        vec![
            Reaction::new(vec![0], vec![1], 10.0),
            Reaction::new(vec![1], vec![0], 1.0),
        ],
    )
    .unwrap()
}

fn histogram(samples: impl Iterator<Item = i64>, n: usize) -> Vec<f64> {
    let mut h = vec![0.0; 64];
    for s in samples {
        h[s as usize] += 1.0 / n as f64;
    }
    h
}

fn tv_to_poisson(h: &[f64], mean: f64) -> f64 {
    let p = Poisson::new(mean).unwrap();
    0.5 * h.iter().enumerate().map(|(k, &v)| (v - p.pmf(k as u64)).abs()).sum::<f64>()
}

#[test]
fn direct_method_matches_poisson_law() {
    let m = birth_death();
    let n = 20_000;
    let h = histogram(
        (0..n).map(|s| ssa_simulate(&m, &[0], 1.0, s as u64).unwrap().final_state()[0]),
        n,
    );
    let mean = 10.0 * (1.0 - (-1.0f64).exp());
    assert!(tv_to_poisson(&h, mean) < 0.03);
    let emp: f64 = h.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    // standard error of the mean is about sqrt(6.3 / n) = 0.018
    assert!((emp - mean).abs() < 0.07, "{emp} vs {mean}");
}

#[test]
fn next_reaction_method_agrees_with_direct_method() {
    let m = birth_death();
    let cells = TimeGrid::from_jumps(&[0.4], 1.0, 0.1, 1);
    let n = 20_000;
    let h = histogram(
        (0..n).map(|s| mnrm_simulate(&m, &cells, &[0], (0.0, 1.0), s as u64).unwrap().final_state()[0]),
        n,
    );
    assert!(tv_to_poisson(&h, 10.0 * (1.0 - (-1.0f64).exp())) < 0.03);
}

#[test]
fn same_seed_same_path() {
    let m = birth_death();
    let a = ssa_simulate(&m, &[2], 3.0, 11).unwrap();
    let b = ssa_simulate(&m, &[2], 3.0, 11).unwrap();
    let c = ssa_simulate(&m, &[2], 3.0, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    // every jump changes the state by a stoichiometric vector
    for (w, &j) in a.states.windows(2).zip(&a.fired) {
        assert_eq!(w[1][0] - w[0][0], m.reactions[j].net[0]);
    }
}
