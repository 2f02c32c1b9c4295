//! The two benchmark networks: a bistable gene switch and a linear cascade.

use srnfilter_core::model::{InitialDistribution, Reaction, SrnModel, StatePartition};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BuiltinError {
    #[error("unknown built-in model `{0}` (expected bistable-gene or linear-cascade)")]
    UnknownModel(String),
    #[error("bad parameter: {0}")]
    BadParam(String),
}

/// A ready-to-run problem: network, partition, initial law and the default
/// truncation bounds for the hidden species (in `partition.hidden()` order).
#[derive(Debug, Clone)]
pub struct Builtin {
    pub name: String,
    pub model: SrnModel,
    pub partition: StatePartition,
    pub mu: InitialDistribution,
    pub bounds: Vec<(i64, i64)>,
    pub horizon: f64,
}

pub fn builtin_model(name: &str, d: Option<usize>) -> Result<Builtin, BuiltinError> {
    match name {
        "bistable-gene" | "bistable" => Ok(bistable_gene()),
        "linear-cascade" | "cascade" => linear_cascade(d.unwrap_or(5)),
        other => Err(BuiltinError::UnknownModel(other.to_string())),
    }
}

fn unit(d: usize, i: usize) -> Vec<u32> {
    let mut v = vec![0; d];
    v[i] = 1;
    v
}

fn sum(d: usize, idx: &[usize]) -> Vec<u32> {
    let mut v = vec![0; d];
    for &i in idx {
        v[i] += 1;
    }
    v
}

/// `0 -> S1 -> S2 -> ... -> Sd`, every species degraded at rate 1.
/// Conversion rates are 10 for the source and 5 for the others.
/// `S1` is of interest and `Sd` is observed.
pub fn linear_cascade(d: usize) -> Result<Builtin, BuiltinError> {
    if d < 2 {
        return Err(BuiltinError::BadParam(format!(
            "linear-cascade needs d >= 2, got {d}"
        )));
    }
    let mut reactions = vec![Reaction::new(vec![0; d], unit(d, 0), 10.0)];
    for i in 1..d {
        reactions.push(Reaction::new(unit(d, i - 1), unit(d, i), 5.0));
    }
    for i in 0..d {
        reactions.push(Reaction::new(unit(d, i), vec![0; d], 1.0));
    }
    let species: Vec<String> = (1..=d).map(|i| format!("S{i}")).collect();
    let model = SrnModel::new(species, reactions).expect("valid cascade");
    let last = format!("S{d}");
    let partition = StatePartition::from_names(&model, &["S1"], &[last.as_str()]).expect("valid partition");
    let mu = InitialDistribution::deterministic(&vec![0; d]).expect("valid initial state");
    Ok(Builtin {
        name: "linear-cascade".into(),
        bounds: vec![(0, 10); d - 1],
        model,
        partition,
        mu,
        horizon: 5.0,
    })
}

/// Two mutually repressing genes. Species order:
/// `G1*, G1, G2*, G2, mRNA1, mRNA2, P1, P2`; both proteins observed,
/// `mRNA2` of interest. Genes start active, everything else at zero.
pub fn bistable_gene() -> Builtin {
    const G1A: usize = 0;
    const G1: usize = 1;
    const G2A: usize = 2;
    const G2: usize = 3;
    const M1: usize = 4;
    const M2: usize = 5;
    const P1: usize = 6;
    const P2: usize = 7;
    let d = 8;
    let m = [M1, M2];
    let p = [P1, P2];
    let ga = [G1A, G2A];
    let gi = [G1, G2];
    let mut reactions = Vec::new();
    let mut pair = |f: &dyn Fn(usize) -> (Vec<u32>, Vec<u32>), rate: f64| {
        for i in 0..2 {
            let (c, pr) = f(i);
            reactions.push(Reaction::new(c, pr, rate));
        }
    };
    pair(&|i| (unit(d, m[i]), vec![0; d]), 0.1);
    pair(&|i| (vec![0; d], unit(d, m[i])), 0.05);
    pair(&|i| (unit(d, m[i]), sum(d, &[m[i], p[i]])), 5.0);
    pair(&|i| (unit(d, p[i]), vec![0; d]), 0.2);
    // protein i deactivates the other gene
    pair(&|i| (sum(d, &[ga[1 - i], p[i]]), sum(d, &[gi[1 - i], p[i]])), 0.1);
    pair(&|i| (unit(d, ga[i]), sum(d, &[ga[i], m[i]])), 1.0);
    pair(&|i| (unit(d, ga[i]), unit(d, gi[i])), 0.03);
    pair(&|i| (unit(d, gi[i]), unit(d, ga[i])), 1e-6);
    let species = ["G1*", "G1", "G2*", "G2", "mRNA1", "mRNA2", "P1", "P2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let model = SrnModel::new(species, reactions).expect("valid bistable network");
    let partition =
        StatePartition::from_names(&model, &["mRNA2"], &["P1", "P2"]).expect("valid partition");
    let mu = InitialDistribution::deterministic(&[1, 0, 1, 0, 0, 0, 0, 0]).expect("valid initial state");
    // hidden order: mRNA2, then G1*, G1, G2*, G2, mRNA1
    let bounds = vec![(0, 30), (0, 1), (0, 1), (0, 1), (0, 1), (0, 30)];
    Builtin {
        name: "bistable-gene".into(),
        model,
        partition,
        mu,
        bounds,
        horizon: 5.0,
    }
}
