//! `pershock`: runs one pipeline stage from a config file and writes
//! plot-ready CSV and JSON artifacts.
//!
//! Exit status is 0 on success, 1 on parse or solver errors and 2 when a
//! checked invariant fails.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use artifacts::Artifacts;
use commands::{Run, Status};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "pershock",
    version,
    about = "Standing viscous shocks with periodic flux"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (relaxed JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Nonlinear solver tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Shock profile CSV for eigen, mass-shock, evolve and verify;
    /// `<out>/profile.csv` by default.
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Periodic cell states at p_minus and p_plus.
    Cell,
    /// Homogenized flux on a range of p.
    HfluxScan,
    /// Rankine-Hugoniot, Oleinik and Lax checks.
    Admissibility,
    /// Shock profile over an increasing sequence of half-lengths.
    Shock {
        #[arg(long = "R-sequence", value_delimiter = ',')]
        r_sequence: Option<Vec<i64>>,
    },
    /// Robin principal solution for a translate difference.
    Eigen {
        #[arg(long = "R-sequence", value_delimiter = ',')]
        r_sequence: Option<Vec<i64>>,
        #[arg(long, allow_hyphen_values = true)]
        k: Option<i64>,
    },
    /// Shock with prescribed excess mass.
    MassShock {
        #[arg(long, allow_hyphen_values = true)]
        q: Option<f64>,
        #[arg(long = "R-sequence", value_delimiter = ',')]
        r_sequence: Option<Vec<i64>>,
    },
    /// Time evolution of a perturbed profile.
    Evolve {
        #[arg(long)]
        snap_every: Option<usize>,
    },
    /// Re-checks a stored profile.
    Verify,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Cell => "cell",
            Command::HfluxScan => "hflux-scan",
            Command::Admissibility => "admissibility",
            Command::Shock { .. } => "shock",
            Command::Eigen { .. } => "eigen",
            Command::MassShock { .. } => "mass-shock",
            Command::Evolve { .. } => "evolve",
            Command::Verify => "verify",
        }
    }
}

fn run(cli: Cli) -> Result<Status> {
    let path = cli.config.as_ref().context("--config is required")?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(t) = cli.tol {
        if !(t > 0.0) {
            anyhow::bail!("--tol must be positive");
        }
        cfg.tolerances.newton = t;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot size the thread pool")?;
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let name = cli.command.name();
    let out = Artifacts::create(&dir, &cfg.hash(), name)?;
    let (mut r_sequence, mut q, mut k, mut snap) = (None, None, None, None);
    match &cli.command {
        Command::Shock { r_sequence: s } => r_sequence = s.clone(),
        Command::Eigen {
            r_sequence: s,
            k: kk,
        } => {
            r_sequence = s.clone();
            k = *kk;
        }
        Command::MassShock {
            q: qq,
            r_sequence: s,
        } => {
            q = *qq;
            r_sequence = s.clone();
        }
        Command::Evolve { snap_every } => snap = *snap_every,
        _ => {}
    }
    let run = Run {
        cfg,
        out,
        profile: cli.profile.clone(),
        r_sequence,
        q,
        k,
    };
    match cli.command {
        Command::Cell => commands::cell(&run),
        Command::HfluxScan => commands::hflux_scan(&run),
        Command::Admissibility => commands::admissibility_cmd(&run),
        Command::Shock { .. } => commands::shock(&run),
        Command::Eigen { .. } => commands::eigen(&run),
        Command::MassShock { .. } => commands::mass_shock(&run),
        Command::Evolve { .. } => commands::evolve(&run, snap),
        Command::Verify => commands::verify(&run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::Fail(what)) => {
            eprintln!("pershock: check failed: {what}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("pershock: error: {e:#}");
            ExitCode::from(1)
        }
    }
}
