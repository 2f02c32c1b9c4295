//! Model files (JSON) and CSV/JSON outputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use srnfilter_core::filters::FilterResult;
use srnfilter_core::model::{InitialDistribution, Marginal, Reaction, SrnModel, StatePartition};
use srnfilter_core::ssa::{ObservedPath, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionSpec {
    #[serde(default)]
    pub consumed: BTreeMap<String, u32>,
    #[serde(default)]
    pub produced: BTreeMap<String, u32>,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub interest: Vec<String>,
    pub observed: Vec<String>,
}

/// On-disk problem description.
///
/// ```json
/// {
///   "species": ["A", "B"],
///   "reactions": [{"consumed": {}, "produced": {"A": 1}, "rate": 2.0}],
///   "initial": {"A": 0, "B": {"support": [0, 1], "probs": [0.5, 0.5]}},
///   "partition": {"interest": ["A"], "observed": ["B"]},
///   "bounds": {"A": [0, 20]},
///   "horizon": 5.0
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub species: Vec<String>,
    pub reactions: Vec<ReactionSpec>,
    #[serde(default)]
    pub initial: BTreeMap<String, Marginal>,
    pub partition: PartitionSpec,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bounds: BTreeMap<String, (i64, i64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

/// Parsed problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: SrnModel,
    pub partition: StatePartition,
    pub mu: InitialDistribution,
    /// Per hidden species in `partition.hidden()` order, when all are given.
    pub bounds: Option<Vec<(i64, i64)>>,
    pub horizon: Option<f64>,
}

impl ModelFile {
    pub fn into_problem(self) -> Result<Problem> {
        let index = |n: &str| -> Result<usize> {
            self.species
                .iter()
                .position(|s| s == n)
                .with_context(|| format!("unknown species `{n}`"))
        };
        let d = self.species.len();
        let mut reactions = Vec::with_capacity(self.reactions.len());
        for r in &self.reactions {
            let mut consumed = vec![0u32; d];
            let mut produced = vec![0u32; d];
            for (n, &c) in &r.consumed {
                consumed[index(n)?] = c;
            }
            for (n, &c) in &r.produced {
                produced[index(n)?] = c;
            }
            reactions.push(Reaction::new(consumed, produced, r.rate));
        }
        let model = SrnModel::new(self.species.clone(), reactions)?;
        let interest: Vec<&str> = self.partition.interest.iter().map(String::as_str).collect();
        let observed: Vec<&str> = self.partition.observed.iter().map(String::as_str).collect();
        let partition = StatePartition::from_names(&model, &interest, &observed)?;
        for n in self.initial.keys() {
            index(n)?;
        }
        let marginals = self
            .species
            .iter()
            .map(|s| self.initial.get(s).cloned().unwrap_or(Marginal::Deterministic(0)))
            .collect();
        let mu = InitialDistribution::new(marginals)?;
        let hidden = partition.hidden();
        let bounds = hidden
            .iter()
            .map(|&i| self.bounds.get(&self.species[i]).copied())
            .collect::<Option<Vec<_>>>();
        Ok(Problem {
            model,
            partition,
            mu,
            bounds,
            horizon: self.horizon,
        })
    }

    pub fn from_problem(p: &Problem) -> Self {
        let names = &p.model.species;
        let to_map = |v: &[u32]| -> BTreeMap<String, u32> {
            v.iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| (names[i].clone(), c))
                .collect()
        };
        let reactions = p
            .model
            .reactions
            .iter()
            .map(|r| ReactionSpec {
                consumed: to_map(&r.consumed),
                produced: to_map(&r.produced),
                rate: r.rate,
            })
            .collect();
        let initial = names
            .iter()
            .cloned()
            .zip(p.mu.marginals.iter().cloned())
            .collect();
        let bounds = match &p.bounds {
            Some(b) => p
                .partition
                .hidden()
                .iter()
                .zip(b)
                .map(|(&i, &b)| (names[i].clone(), b))
                .collect(),
            None => BTreeMap::new(),
        };
        ModelFile {
            species: names.clone(),
            reactions,
            initial,
            partition: PartitionSpec {
                interest: p.partition.interest().iter().map(|&i| names[i].clone()).collect(),
                observed: p.partition.observed().iter().map(|&i| names[i].clone()).collect(),
            },
            bounds,
            horizon: p.horizon,
        }
    }
}

pub fn read_model(path: &Path) -> Result<Problem> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: ModelFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    file.into_problem()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_path(path: &Path) -> Result<ObservedPath> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let p: ObservedPath = serde_json::from_str(&text)?;
    p.check()?;
    Ok(p)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// `time,species...`, one row per state of the path.
pub fn write_trajectory<W: std::io::Write>(w: W, species: &[String], traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["time".to_string()];
    header.extend(species.iter().cloned());
    out.write_record(&header)?;
    for (t, z) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![t.to_string()];
        row.extend(z.iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// `time,observed species...`: the initial value and every jump.
pub fn write_path_csv(path: &Path, names: &[String], obs: &ObservedPath) -> Result<()> {
    let mut out = csv_writer(path)?;
    let mut header = vec!["time".to_string()];
    header.extend(names.iter().cloned());
    out.write_record(&header)?;
    let mut row = vec!["0".to_string()];
    row.extend(obs.initial.iter().map(|v| v.to_string()));
    out.write_record(&row)?;
    for (t, y) in obs.jump_times.iter().zip(&obs.values) {
        let mut row = vec![t.to_string()];
        row.extend(y.iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Long format `time,segment,state...,prob`, nonzero entries only.
pub fn write_pmf_long(path: &Path, names: &[String], r: &FilterResult) -> Result<()> {
    let mut out = csv_writer(path)?;
    let mut header = vec!["time".to_string(), "segment".to_string()];
    header.extend(names.iter().cloned());
    header.push("prob".into());
    out.write_record(&header)?;
    let mut buf = vec![0; r.space.dim()];
    for ((t, k), p) in r.times.iter().zip(&r.segments).zip(&r.pmfs) {
        for (i, &v) in p.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            r.space.state_into(i, &mut buf);
            let mut row = vec![t.to_string(), k.to_string()];
            row.extend(buf.iter().map(|x| x.to_string()));
            row.push(format!("{v:e}"));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `time,mean_<s>,var_<s>...,ess,leak`.
pub fn write_summary(path: &Path, names: &[String], r: &FilterResult) -> Result<()> {
    let mut out = csv_writer(path)?;
    let mut header = vec!["time".to_string()];
    for n in names {
        header.push(format!("mean_{n}"));
        header.push(format!("var_{n}"));
    }
    header.push("ess".into());
    header.push("leak".into());
    out.write_record(&header)?;
    for i in 0..r.times.len() {
        let mut row = vec![r.times[i].to_string()];
        for (m, v) in r.mean[i].iter().zip(&r.var[i]) {
            row.push(m.to_string());
            row.push(v.to_string());
        }
        row.push(r.diagnostics.ess.get(i).map_or(String::new(), |e| e.to_string()));
        row.push(r.leak.get(i).map_or(String::new(), |e| e.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a trajectory CSV written by [`write_trajectory`]. The reactions
/// that fired are not stored, so `fired` comes back empty.
pub fn read_trajectory(path: &Path, species: &[String], horizon: Option<f64>) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("time") || header.iter().skip(1).ne(species.iter().map(String::as_str)) {
        bail!("trajectory columns must be time,{}", species.join(","));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        times.push(rec[0].parse::<f64>()?);
        states.push(rec.iter().skip(1).map(str::parse).collect::<Result<Vec<i64>, _>>()?);
    }
    let Some(&last) = times.last() else {
        bail!("trajectory {} is empty", path.display());
    };
    Ok(Trajectory {
        times,
        states,
        fired: Vec::new(),
        horizon: horizon.unwrap_or(last),
    })
}
