//! `invset` command line: run scenario files, batches of them, or export
//! a trajectory as CSV.
//!
//! Exit codes: 0 pass, 1 fail / borderline / hypothesis-error, 2 config error.

mod config;
mod export;
mod report;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use invset::integrate::flow_adaptive;
use invset::rank_sets::DEFAULT_RANK_TOL;

use config::{Overrides, ScenarioConfig};
use report::{summary_table, Outcome, SummaryRow};

#[derive(Parser, Debug)]
#[command(name = "invset", version, about = "Invariant-set checks for integrable systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and print its JSON report.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run every *.json scenario in a directory and print a summary table.
    RunAll {
        dir: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Integrate a scenario's start state and write the trajectory as CSV.
    Export {
        config: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

/// Replace the matching config fields.
#[derive(Args, Debug, Clone, Copy)]
struct OverrideArgs {
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    rank_tol: Option<f64>,
    #[arg(long)]
    residual_tol: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Self {
            abs_tol: a.abs_tol,
            rel_tol: a.rel_tol,
            rank_tol: a.rank_tol,
            residual_tol: a.residual_tol,
            t_end: a.t_end,
            samples: a.samples,
            seed: a.seed,
        }
    }
}

fn run_one(path: &Path, overrides: &Overrides) -> i32 {
    let out = runner::run_file(path, overrides);
    println!("{}", out.report.to_json());
    if let Err(e) = runner::write_outputs(&out) {
        eprintln!("error: {e}");
        return Outcome::ConfigError.exit_code();
    }
    if let Some(msg) = &out.report.message {
        eprintln!("{}: {msg}", out.report.verdict);
    }
    out.report.exit_code
}

fn scenario_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no *.json scenarios in {}", dir.display());
    }
    Ok(files)
}

/// 0 when every scenario gives its expected verdict, 2 if any config is
/// invalid, 1 otherwise.
fn run_all(dir: &Path, overrides: &Overrides) -> i32 {
    let files = match scenario_files(dir) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 2;
        }
    };
    let outputs: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = files
            .iter()
            .map(|f| s.spawn(move || runner::run_file(f, overrides)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
    });
    let mut rows = Vec::new();
    let mut config_error = false;
    for (path, out) in files.iter().zip(&outputs) {
        let r = &out.report;
        if let Err(e) = runner::write_outputs(out) {
            eprintln!("{}: {e}", path.display());
            config_error = true;
        }
        if r.verdict != Outcome::Pass {
            if let Some(msg) = &r.message {
                eprintln!("{}: {}: {msg}", path.display(), r.verdict);
            }
        }
        config_error |= r.verdict == Outcome::ConfigError;
        rows.push(SummaryRow {
            file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            check: r.config.as_ref().map(|c| c.check.to_string()).unwrap_or_else(|| "-".into()),
            verdict: r.verdict,
            expected: r.config.as_ref().and_then(|c| c.expect.clone()).unwrap_or_else(|| "pass".into()),
            seconds: r.elapsed_seconds,
        });
    }
    print!("{}", summary_table(&rows));
    if config_error {
        2
    } else if rows.iter().all(SummaryRow::as_expected) {
        0
    } else {
        1
    }
}

fn export_one(path: &Path, csv: &Path, overrides: &Overrides) -> i32 {
    let mut c = match ScenarioConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config-error: {e}");
            return 2;
        }
    };
    c.apply(overrides);
    let p = match runner::prepare(&c) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config-error: {e}");
            return 2;
        }
    };
    let traj = match flow_adaptive(&p.model.system, &p.x0, c.t_end, &c.flow_options()) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let tau = c.rank_tol.unwrap_or(DEFAULT_RANK_TOL);
    match export::write_csv(csv, &traj, &p.quantity, &p.model.coordinates, tau) {
        Ok(()) => {
            println!("wrote {} samples to {}", traj.len(), csv.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, overrides } => run_one(&config, &overrides.into()),
        Command::RunAll { dir, overrides } => run_all(&dir, &overrides.into()),
        Command::Export { config, csv, overrides } => export_one(&config, &csv, &overrides.into()),
    };
    ExitCode::from(code as u8)
}
