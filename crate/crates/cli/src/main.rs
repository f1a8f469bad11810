//! `bayes-ltv`: generate fixtures, fit posteriors, run comparison sweeps and
//! emit plot-ready series.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::{Kind, RunConfig};
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "bayes-ltv", version, about = "Variational impulse-response posteriors")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON config file; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.steps=500`.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    kind: Option<Kind>,
    /// Number of pairs to generate (lti and ant).
    #[arg(long, global = true)]
    pairs: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Write synthetic fixtures and a manifest.
    Gen,
    /// Fit the fixtures in the output directory.
    Fit,
    /// Run the comparison experiment for the kind.
    Compare,
    /// Turn result files into `x,y[,ylo,yhi]` series under `plot/`.
    Plotdata,
    /// Run the Monte Carlo oracle suites.
    Selftest,
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = config::load(cli.config.as_deref(), &cli.set)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(k) = cli.kind {
        cfg.kind = k;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(n) = cli.pairs {
        match cfg.kind {
            Kind::Lti => cfg.lti.n_pairs = n,
            Kind::Ant => cfg.ant.scenario.n_pairs = n,
            Kind::Ltv => return Err(CliError::config("--pairs does not apply to ltv")),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(cli)?;
    match cli.command {
        Cmd::Gen => commands::gen::run(&cfg),
        Cmd::Fit => commands::fit::run(&cfg),
        Cmd::Compare => commands::compare::run(&cfg),
        Cmd::Plotdata => commands::plotdata::run(&cfg),
        Cmd::Selftest => commands::selftest::run(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let t0 = Instant::now();
    let res = run(&cli);
    let secs = t0.elapsed().as_secs_f64();
    match res {
        Ok(()) => {
            eprintln!("{:?} finished in {secs:.2} s", cli.command);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
