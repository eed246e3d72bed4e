mod config;
mod tasks;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use loggap::acceptance::{Acceptance, AcceptanceOptions, CRITERIA};
use loggap::bounds::REGISTRY;
use loggap::measure::MeasureSpec;
use loggap::{Error, Result};
use serde_json::json;

use config::{resolve, ExperimentConfig, Overrides, Task};

#[derive(Parser)]
#[command(name = "loggap", version, about = "Spectral gap experiments for log-concave measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON experiment config; its values win over flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for summary.json and CSV tables
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "LOGGAP_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Measure as inline JSON
    #[arg(long)]
    measure: Option<String>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Lowest eigenvalues with parity labels
    Spectrum(Common),
    /// First even eigenvalue against the (n+1)-th odd one
    Interlace(Common),
    /// Structure of the first eigenspace under the cube group
    Eigenspace(Common),
    /// alpha(t) profile of a Gaussian mixture
    Alpha(Common),
    /// Covariance domination of a perturbed measure
    Cov(Common),
    /// Uniform measure on a section of an l_p ball
    Section(Common),
    /// Registry of closed-form bounds; `bounds list` prints it
    Bounds {
        #[arg(value_parser = ["list"])]
        action: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Random nu^{2,Q} sweep
    Sweep(Common),
    /// Acceptance criteria
    Selftest {
        /// Comma-separated criterion numbers; all by default
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "LOGGAP_THREADS")]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Status {
    Ok,
    Violation,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Status::Ok) => ExitCode::from(0),
        Ok(Status::Violation) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Result<Status> {
    let (task, common) = match cmd {
        Command::Spectrum(c) => (Task::Spectrum, c),
        Command::Interlace(c) => (Task::Interlace, c),
        Command::Eigenspace(c) => (Task::Eigenspace, c),
        Command::Alpha(c) => (Task::AlphaProfile, c),
        Command::Cov(c) => (Task::CovarianceDominance, c),
        Command::Section(c) => (Task::Section, c),
        Command::Sweep(c) => (Task::Sweep, c),
        Command::Bounds { action: Some(_), .. } => {
            for f in REGISTRY {
                println!("{:<20} {}  [params: {}; constants: {}]", f.id, f.citation, f.params.join(", "), f.constants.join(", "));
            }
            return Ok(Status::Ok);
        }
        Command::Bounds { action: None, common } => (Task::BoundsReport, common),
        Command::Selftest { criteria, seed, threads, out } => return selftest(&criteria, seed, threads, out),
    };
    run_experiment(task, common)
}

fn parse_measure(s: &str) -> Result<MeasureSpec> {
    MeasureSpec::from_json(s).map_err(|e| Error::ConfigInvalid { path: "--measure".into(), message: e.to_string() })
}

fn run_experiment(task: Task, c: Common) -> Result<Status> {
    let base = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::empty(),
    };
    let overrides = Overrides {
        task: Some(task),
        measure: c.measure.as_deref().map(parse_measure).transpose()?,
        seed: c.seed,
        threads: c.threads,
        tolerance: c.tolerance,
        out: c.out,
        resolution: c.resolution,
        steps: c.steps,
        count: c.count,
    };
    let (cfg, warnings) = resolve(base, overrides);
    for w in &warnings {
        warn!("{w}");
    }
    let task = cfg.validate()?;
    if let Some(k) = cfg.threads {
        loggap::par::configure_threads(k)?;
    }
    info!("running {task:?}");
    let out = tasks::run(task, &cfg)?;
    let violated: Vec<&str> = out.assertions.iter().filter(|a| !a.holds).map(|a| a.name.as_str()).collect();
    let status = if violated.is_empty() { "ok" } else { "violation" };
    let summary = json!({
        "tool": { "name": "loggap", "version": env!("CARGO_PKG_VERSION") },
        "task": task,
        "config": cfg,
        "seed": cfg.seed,
        "tolerance": cfg.tolerance_or_default(task),
        "constants_used": out.constants_used,
        "result": out.result,
        "assertions": out.assertions,
        "warnings": warnings,
        "status": status,
    });
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("loggap-out"));
    write_outputs(&dir, &summary, &out.tables)?;
    for a in &out.assertions {
        println!("{} {}: {}", if a.holds { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    println!("wrote {}", dir.join("summary.json").display());
    Ok(if violated.is_empty() { Status::Ok } else { Status::Violation })
}

fn write_outputs(dir: &Path, summary: &serde_json::Value, tables: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)? + "\n")?;
    for (name, text) in tables {
        fs::write(dir.join(name), text)?;
    }
    Ok(())
}

fn selftest(criteria: &[u8], seed: Option<u64>, threads: Option<usize>, out: Option<PathBuf>) -> Result<Status> {
    if let Some(k) = threads {
        loggap::par::configure_threads(k)?;
    }
    let mut opts = AcceptanceOptions::default();
    if let Some(s) = seed {
        opts.seed = s;
    }
    let ids: Vec<u8> = if criteria.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { criteria.to_vec() };
    if let Some(bad) = ids.iter().find(|i| !(1..=12).contains(*i)) {
        return Err(Error::ConfigInvalid { path: "--criteria".into(), message: format!("no criterion {bad}") });
    }
    let suite = Acceptance::new(opts);
    let mut outcomes = Vec::new();
    for id in ids {
        let o = suite.run(id);
        println!("{}", o.line());
        outcomes.push(o);
    }
    if let Some(dir) = out {
        write_outputs(&dir, &json!({ "options": opts, "criteria": outcomes }), &[])?;
    }
    Ok(if outcomes.iter().all(|o| o.passed) { Status::Ok } else { Status::Violation })
}
