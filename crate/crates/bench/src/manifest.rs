//! Run settings from flags and an optional JSON config file.
//!
//! Every field is optional; a config file value wins over the flag.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use srnfilter_core::filters::{FilterConfig, Method};
use srnfilter_core::model::StatePartition;
use srnfilter_core::particle::Resampling;
use srnfilter_core::projection::Interpolation;
use srnfilter_core::ssa::{extract_observation, sample_initial, ssa_simulate, ObservedPath};

use crate::builtin::builtin_model;
use crate::io::{read_model, read_path, Problem};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_M: usize = 1000;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// JSON file whose fields override the flags
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// `builtin:<name>` or a model JSON file
    #[arg(long)]
    pub model: Option<String>,
    /// Cascade length for builtin:linear-cascade
    #[arg(long)]
    pub d: Option<usize>,
    /// `interest=A,B;observed=C`
    #[arg(long)]
    pub partition: Option<String>,
    /// Observed path JSON; generated from the seed when absent
    #[arg(long)]
    pub path: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    /// Sample size; a comma list for convergence sweeps
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub m: Option<Sizes>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// `lo:hi` for every hidden species, or a comma list in hidden order
    #[arg(long = "box")]
    #[serde(rename = "box")]
    pub bounds: Option<String>,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// multinomial or systematic
    #[arg(long)]
    pub resampling: Option<String>,
    /// Resample between jumps when the ESS falls below this fraction of M
    #[arg(long)]
    pub ess_threshold: Option<f64>,
    /// constant or linear (table lookup between grid times)
    #[arg(long)]
    pub interpolation: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunManifest {
    /// Applies the config file named by `--config`, if any.
    pub fn resolve(self) -> Result<Self> {
        let Some(file) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
        let over: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))?;
        let mut base = serde_json::to_value(&self)?;
        let over = serde_json::to_value(&over)?;
        if let (Some(b), Some(o)) = (base.as_object_mut(), over.as_object()) {
            for (k, v) in o {
                if !v.is_null() {
                    b.insert(k.clone(), v.clone());
                }
            }
        }
        let mut merged: RunManifest = serde_json::from_value(base)?;
        merged.config = Some(file);
        Ok(merged)
    }

    /// The single sample size of a filter run.
    pub fn sample_size(&self) -> Result<usize> {
        match &self.m {
            None => Ok(DEFAULT_M),
            Some(Sizes(v)) if v.len() == 1 => Ok(v[0]),
            Some(_) => bail!("--M takes a single value here"),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn problem(&self) -> Result<Problem> {
        let name = self.model.as_deref().context("--model is required")?;
        let mut p = match name.strip_prefix("builtin:") {
            Some(b) => {
                let b = builtin_model(b, self.d)?;
                Problem {
                    model: b.model,
                    partition: b.partition,
                    mu: b.mu,
                    bounds: Some(b.bounds),
                    horizon: Some(b.horizon),
                }
            }
            None => read_model(Path::new(name))?,
        };
        if let Some(spec) = &self.partition {
            let (interest, observed) = parse_partition(spec)?;
            let i: Vec<&str> = interest.iter().map(String::as_str).collect();
            let o: Vec<&str> = observed.iter().map(String::as_str).collect();
            let new = StatePartition::from_names(&p.model, &i, &o)?;
            if new != p.partition {
                p.bounds = None;
            }
            p.partition = new;
        }
        if let Some(b) = &self.bounds {
            p.bounds = Some(parse_box(b, p.partition.hidden().len())?);
        }
        if let Some(t) = self.horizon {
            p.horizon = Some(t);
        }
        Ok(p)
    }

    pub fn horizon(&self, p: &Problem) -> Result<f64> {
        let t = p.horizon.context("no horizon: pass --T")?;
        if !(t > 0.0) {
            bail!("horizon must be positive");
        }
        Ok(t)
    }

    pub fn filter_config(&self, p: &Problem) -> Result<FilterConfig> {
        let method: Method = self
            .method
            .as_deref()
            .unwrap_or("cmp")
            .parse()
            .map_err(anyhow::Error::msg)?;
        let bounds = p.bounds.clone().context("no truncation box: pass --box")?;
        let mut cfg = FilterConfig::new(
            method,
            self.sample_size()?,
            self.dt.unwrap_or(DEFAULT_DT),
            bounds,
            self.seed(),
        );
        if let Some(r) = &self.resampling {
            cfg.resampling = parse_enum::<Resampling>(r)?;
        }
        cfg.ess_threshold = self.ess_threshold;
        if let Some(i) = &self.interpolation {
            cfg.interpolation = parse_enum::<Interpolation>(i)?;
        }
        Ok(cfg)
    }

    /// The path file, or a path generated by simulating from the seed.
    pub fn observed_path(&self, p: &Problem) -> Result<ObservedPath> {
        if let Some(file) = &self.path {
            let path = read_path(file)?;
            if path.initial.len() != p.partition.observed().len() {
                bail!("path has {} observed species, the partition {}", path.initial.len(), p.partition.observed().len());
            }
            return Ok(path);
        }
        Ok(generate_path(p, self.horizon(p)?, self.seed())?)
    }
}

/// One or more sample sizes: `500`, `"125,250"` or `[125, 250]` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SizesRepr", into = "Vec<usize>")]
pub struct Sizes(pub Vec<usize>);

#[derive(Deserialize)]
#[serde(untagged)]
enum SizesRepr {
    One(usize),
    Many(Vec<usize>),
    Text(String),
}

impl TryFrom<SizesRepr> for Sizes {
    type Error = String;
    fn try_from(r: SizesRepr) -> Result<Self, String> {
        match r {
            SizesRepr::One(m) => Ok(Sizes(vec![m])),
            SizesRepr::Many(v) => Ok(Sizes(v)),
            SizesRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Sizes> for Vec<usize> {
    fn from(s: Sizes) -> Self {
        s.0
    }
}

impl std::str::FromStr for Sizes {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let v = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad sample size `{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if v.iter().any(|&m| m == 0) {
            return Err("sample sizes must be positive".into());
        }
        Ok(Sizes(v))
    }
}

pub fn generate_path(p: &Problem, horizon: f64, seed: u64) -> Result<ObservedPath> {
    let z0 = sample_initial(&p.mu, seed);
    let traj = ssa_simulate(&p.model, &z0, horizon, seed)?;
    Ok(extract_observation(&traj, &p.partition))
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .with_context(|| format!("unrecognized value `{s}`"))
}

/// `interest=A,B;observed=C`.
pub fn parse_partition(s: &str) -> Result<(Vec<String>, Vec<String>)> {
    let mut interest = None;
    let mut observed = None;
    for part in s.split(';').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part.split_once('=').context("partition must look like interest=A;observed=B")?;
        let names: Vec<String> = v.split(',').map(|n| n.trim().to_string()).filter(|n| !n.is_empty()).collect();
        match k.trim() {
            "interest" => interest = Some(names),
            "observed" => observed = Some(names),
            other => bail!("unknown partition key `{other}`"),
        }
    }
    Ok((
        interest.context("partition lacks interest=")?,
        observed.context("partition lacks observed=")?,
    ))
}

/// `lo:hi` repeated `n` times, or `n` comma-separated `lo:hi` pairs.
pub fn parse_box(s: &str, n: usize) -> Result<Vec<(i64, i64)>> {
    let pairs = s
        .split(',')
        .map(|p| {
            let (lo, hi) = p.split_once(':').with_context(|| format!("bad box entry `{p}`"))?;
            let lo: i64 = lo.trim().parse()?;
            let hi: i64 = hi.trim().parse()?;
            if lo < 0 || hi < lo {
                bail!("bad box entry `{p}`");
            }
            Ok((lo, hi))
        })
        .collect::<Result<Vec<_>>>()?;
    match pairs.len() {
        1 => Ok(vec![pairs[0]; n]),
        k if k == n => Ok(pairs),
        k => bail!("box has {k} entries, {n} hidden species"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_forms() {
        assert_eq!(parse_box("0:10", 3).unwrap(), vec![(0, 10); 3]);
        assert_eq!(parse_box("0:3, 1:2", 2).unwrap(), vec![(0, 3), (1, 2)]);
        assert!(parse_box("0:3,1:2", 3).is_err());
        assert!(parse_box("4:3", 1).is_err());
    }

    #[test]
    fn sizes_forms() {
        let a: Sizes = serde_json::from_str("[1, 2]").unwrap();
        let b: Sizes = serde_json::from_str("\"1,2\"").unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::from_str::<Sizes>("3").unwrap(), Sizes(vec![3]));
        assert!("0".parse::<Sizes>().is_err());
    }

    #[test]
    fn partition_form() {
        let (i, o) = parse_partition("interest=A,B;observed=C").unwrap();
        assert_eq!(i, vec!["A", "B"]);
        assert_eq!(o, vec!["C"]);
        assert!(parse_partition("observed=C").is_err());
    }

    #[test]
    fn config_overrides_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.json");
        std::fs::write(&cfg, r#"{"M": 77, "method": "pf"}"#).unwrap();
        let flags = RunManifest {
            config: Some(cfg),
            m: Some(Sizes(vec![5])),
            dt: Some(0.5),
            method: Some("cmp".into()),
            ..Default::default()
        };
        let r = flags.resolve().unwrap();
        assert_eq!(r.sample_size().unwrap(), 77);
        assert_eq!(r.method.as_deref(), Some("pf"));
        assert_eq!(r.dt, Some(0.5));
    }

    #[test]
    fn builtin_problem_defaults() {
        let m = RunManifest {
            model: Some("builtin:linear-cascade".into()),
            d: Some(4),
            ..Default::default()
        };
        let p = m.problem().unwrap();
        assert_eq!(p.bounds.as_ref().unwrap().len(), 3);
        let cfg = m.filter_config(&p).unwrap();
        assert_eq!(cfg.method, Method::Cmp);
        assert_eq!(cfg.seed, DEFAULT_SEED);
    }
}
