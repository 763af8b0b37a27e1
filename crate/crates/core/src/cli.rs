//! Command-line front end: `run`, `sweep` and `validate`.
//!
//! Exit status is 0 on success, 1 for configuration or argument errors and 2 for
//! failures during a run.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_raw, ExperimentConfig, RawConfig};
use crate::engine::run_experiment;
use crate::error::{Error, Result};
use crate::report::{emit_csv, run_metrics, summary_rows, write_summary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "freeride",
    version,
    about = "Free-rider detection experiments for federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its CSV files.
    Run(Common),
    /// Run one experiment per combination of swept values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `KEY=V1,V2,...`; use `;` between values that themselves contain commas.
        /// Repeat the flag to sweep several keys jointly (cartesian product).
        #[arg(long = "sweep", required = true)]
        sweeps: Vec<String>,
    },
    /// Check a config file and print its canonical form.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out`; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

/// Loading counts as configuration: unreadable files included.
fn load(common: &Common) -> std::result::Result<RawConfig, Failure> {
    let mut raw = load_raw(&common.config).map_err(Failure::Config)?;
    if let Some(seed) = common.seed {
        raw.insert("seed".into(), seed.to_string());
    }
    if let Some(out) = &common.out {
        raw.insert("out".into(), out.display().to_string());
    }
    Ok(raw)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

/// Runs `cfg` (all repeats) under `dir`; returns `(run name, metrics)` per repeat.
fn run_into(cfg: &ExperimentConfig, dir: &Path, name: &str) -> std::result::Result<Vec<String>, Failure> {
    let mut rows = Vec::new();
    for rep in 0..cfg.repeats {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(rep as u64);
        let (d, n) = if cfg.repeats > 1 {
            (dir.join(format!("rep{rep}")), format!("{name}/rep{rep}"))
        } else {
            (dir.to_path_buf(), name.to_string())
        };
        log::info!("running {} into {}", n, d.display());
        let run = run_experiment(&c)?;
        emit_csv(&run, &d)?;
        rows.extend(summary_rows(&n, &run_metrics(&run)?));
    }
    Ok(rows)
}

fn parse_sweep(arg: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = arg
        .split_once('=')
        .ok_or_else(|| Error::config("--sweep", format!("expected KEY=V1,V2,..., got `{arg}`")))?;
    let sep = if values.contains(';') { ';' } else { ',' };
    let values: Vec<String> = values
        .split(sep)
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Error::config(key.trim(), "sweep has no values"));
    }
    Ok((key.trim().to_string(), values))
}

fn sweep(common: &Common, specs: &[String]) -> std::result::Result<(), Failure> {
    let base = load(common)?;
    let axes = specs
        .iter()
        .map(|s| parse_sweep(s))
        .collect::<Result<Vec<_>>>()
        .map_err(Failure::Config)?;
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    // validate every point before running any
    let mut configs = Vec::new();
    for p in &points {
        let mut raw = base.clone();
        for (k, v) in p {
            raw.insert(k.clone(), v.clone());
        }
        configs.push(ExperimentConfig::from_raw(&raw).map_err(Failure::Config)?);
    }
    let root = out_dir(&configs[0]);
    let mut rows = Vec::new();
    for (p, cfg) in points.iter().zip(&configs) {
        let name: Vec<String> = p
            .iter()
            .map(|(k, v)| format!("{k}={}", v.replace(['/', ','], "_")))
            .collect();
        let name = name.join("+");
        rows.extend(run_into(cfg, &root.join(&name), &name)?);
    }
    write_summary(&root.join("summary.csv"), &rows)?;
    Ok(())
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Run(common) => {
            let cfg = ExperimentConfig::from_raw(&load(&common)?).map_err(Failure::Config)?;
            let dir = out_dir(&cfg);
            let rows = run_into(&cfg, &dir, ".")?;
            if cfg.repeats > 1 {
                write_summary(&dir.join("summary.csv"), &rows)?;
            }
            Ok(())
        }
        Command::Sweep { common, sweeps } => sweep(&common, &sweeps),
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config).map_err(Failure::Config)?;
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit status.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
