use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::json;

use srnfilter::convergence::{method_name, run_convergence, write_rows, TailQoi};
use srnfilter::io::{self, Problem};
use srnfilter::manifest::{generate_path, RunManifest, Sizes};
use srnfilter::validate;
use srnfilter_core::ffsp::box_size;
use srnfilter_core::filters::{planned_states, run_filter, FilterError, Method};
use srnfilter_core::ssa::{extract_observation, sample_initial, ssa_simulate, SimError};

#[derive(Parser)]
#[command(name = "srnfilter", version, about = "Filtering for stochastic reaction networks with exact partial observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory; writes trajectory.csv, path.json and path.csv
    Simulate(RunManifest),
    /// Extract the observed path from a trajectory CSV
    Observe {
        #[command(flatten)]
        run: RunManifest,
        #[arg(long)]
        trajectory: PathBuf,
    },
    /// Run a filter; writes pmf.csv, summary.csv and diagnostics.json
    Filter {
        #[command(flatten)]
        run: RunManifest,
        /// Report the state counts without solving
        #[arg(long)]
        dry_run: bool,
    },
    /// Error of a tail probability against full FFSP over M and seeds
    Convergence {
        #[command(flatten)]
        run: RunManifest,
        #[arg(long, default_value = "tail:Z1>=8")]
        qoi: String,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long, default_value = "cmp,pf,ump")]
        methods: String,
    },
    /// Oracle checks on small networks
    Validate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 2, kind: "usage", error }
}

fn numerical(error: anyhow::Error) -> Failure {
    Failure { code: 3, kind: "numerical", error }
}

fn from_filter(e: FilterError) -> Failure {
    if e.is_degenerate() {
        Failure { code: 4, kind: "degenerate", error: e.into() }
    } else if matches!(e, FilterError::Input(_) | FilterError::Model(_)) {
        usage(e.into())
    } else {
        numerical(e.into())
    }
}

fn from_sim(e: SimError) -> Failure {
    match e {
        SimError::Input(_) => usage(e.into()),
        _ => numerical(e.into()),
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version go to stdout with status 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let detail = json!({
                "error": f.kind,
                "code": f.code,
                "message": format!("{:#}", f.error),
            });
            eprintln!("{detail}");
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::Simulate(run) => simulate(run.resolve().map_err(usage)?),
        Command::Observe { run, trajectory } => observe(run.resolve().map_err(usage)?, &trajectory),
        Command::Filter { run, dry_run } => filter(run.resolve().map_err(usage)?, dry_run),
        Command::Convergence {
            run,
            qoi,
            reps,
            methods,
        } => convergence(run.resolve().map_err(usage)?, &qoi, reps, &methods),
        Command::Validate { seed } => run_validate(seed),
    }
}

fn prepare(run: &RunManifest) -> Result<(Problem, PathBuf), Failure> {
    let p = run.problem().map_err(usage)?;
    let out = run.out_dir();
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(usage)?;
    Ok((p, out))
}

fn names(p: &Problem, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| p.model.species[i].clone()).collect()
}

/// Records the resolved settings, including the seed.
fn write_manifest(out: &Path, run: &RunManifest) -> Outcome {
    let mut run = run.clone();
    run.seed = Some(run.seed());
    io::write_json(&out.join("manifest.json"), &run).map_err(usage)
}

fn simulate(run: RunManifest) -> Outcome {
    let (p, out) = prepare(&run)?;
    let horizon = run.horizon(&p).map_err(usage)?;
    let seed = run.seed();
    let z0 = sample_initial(&p.mu, seed);
    let traj = ssa_simulate(&p.model, &z0, horizon, seed).map_err(from_sim)?;
    let file = std::fs::File::create(out.join("trajectory.csv"))
        .context("creating trajectory.csv")
        .map_err(usage)?;
    io::write_trajectory(file, &p.model.species, &traj).map_err(numerical)?;
    let path = extract_observation(&traj, &p.partition);
    write_path(&out, &p, &path)?;
    write_manifest(&out, &run)?;
    println!("{}", json!({"jumps": traj.jump_count(), "observed_jumps": path.jump_count(), "out": out}));
    Ok(())
}

fn write_path(out: &Path, p: &Problem, path: &srnfilter_core::ssa::ObservedPath) -> Outcome {
    io::write_json(&out.join("path.json"), path).map_err(usage)?;
    io::write_path_csv(&out.join("path.csv"), &names(p, p.partition.observed()), path).map_err(usage)
}

fn observe(run: RunManifest, trajectory: &Path) -> Outcome {
    let (p, out) = prepare(&run)?;
    let traj = io::read_trajectory(trajectory, &p.model.species, run.horizon).map_err(usage)?;
    let path = extract_observation(&traj, &p.partition);
    write_path(&out, &p, &path)?;
    println!("{}", json!({"observed_jumps": path.jump_count(), "out": out}));
    Ok(())
}

fn filter(run: RunManifest, dry_run: bool) -> Outcome {
    let p = run.problem().map_err(usage)?;
    let cfg = run.filter_config(&p).map_err(usage)?;
    if dry_run {
        let hidden = p.partition.hidden().len();
        if cfg.bounds.len() < hidden {
            return Err(usage(anyhow::anyhow!("{} bounds given, {hidden} needed", cfg.bounds.len())));
        }
        let report = json!({
            "method": method_name(cfg.method),
            "hidden_species": names(&p, &p.partition.hidden()),
            "hidden_states": box_size(&cfg.bounds[..hidden]).to_string(),
            "interest_states": box_size(&cfg.bounds[..p.partition.interest().len()]).to_string(),
            "planned_states": planned_states(&p.partition, &cfg).to_string(),
            "size_cap": cfg.size_cap,
        });
        println!("{report}");
        return Ok(());
    }
    let (_, out) = prepare(&run)?;
    let path = run.observed_path(&p).map_err(usage)?;
    let r = run_filter(&p.model, &p.partition, &p.mu, &path, &cfg).map_err(from_filter)?;
    let interest = names(&p, p.partition.interest());
    io::write_pmf_long(&out.join("pmf.csv"), &interest, &r).map_err(usage)?;
    io::write_summary(&out.join("summary.csv"), &interest, &r).map_err(usage)?;
    io::write_json(&out.join("diagnostics.json"), &r.diagnostics).map_err(usage)?;
    write_path(&out, &p, &path)?;
    write_manifest(&out, &run)?;
    println!(
        "{}",
        json!({
            "method": method_name(r.method),
            "nodes": r.times.len(),
            "wall_time_s": r.diagnostics.wall_time_s,
            "final_mean": r.mean.last(),
            "out": out,
        })
    );
    Ok(())
}

fn convergence(run: RunManifest, qoi: &str, reps: usize, methods: &str) -> Outcome {
    let (p, out) = prepare(&run)?;
    let ms = match &run.m {
        Some(Sizes(v)) => v.clone(),
        None => vec![125, 250, 500, 1000, 2000],
    };
    let methods = methods
        .split(',')
        .map(|m| m.trim().parse::<Method>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| usage(anyhow::anyhow!(e)))?;
    if methods.contains(&Method::FullFfsp) {
        return Err(usage(anyhow::anyhow!("ffsp is the reference, not a swept method")));
    }
    let mut single = run.clone();
    single.m = None;
    let cfg = single.filter_config(&p).map_err(usage)?;
    let qoi = TailQoi::parse(qoi, &p.model, &p.partition).map_err(usage)?;
    let horizon = run.horizon(&p).map_err(usage)?;
    let path = match &run.path {
        Some(_) => run.observed_path(&p).map_err(usage)?,
        None => generate_path(&p, horizon, run.seed()).map_err(numerical)?,
    };
    let report = run_convergence(&p.model, &p.partition, &p.mu, &path, &cfg, &qoi, &methods, &ms, reps)
        .map_err(numerical)?;
    write_rows(&out.join("convergence.csv"), &report.rows).map_err(usage)?;
    io::write_json(&out.join("convergence.json"), &report).map_err(usage)?;
    write_manifest(&out, &run)?;
    println!("{}", json!({"reference": report.reference, "slopes": report.slopes, "out": out}));
    Ok(())
}

fn run_validate(seed: u64) -> Outcome {
    let checks = validate::run_all(seed);
    for c in &checks {
        println!("{}", serde_json::to_string(c).expect("checks serialize"));
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(numerical(anyhow::anyhow!("failed checks: {}", failed.join("; "))))
    }
}
