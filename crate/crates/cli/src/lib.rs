//! `liqsolve` command line: reads a JSON run configuration, runs one of
//! the solver pipelines and writes CSV and JSON results.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::RunConfig;
use crate::output::Sink;

/// Environment variable read for the worker thread count.
pub const THREADS_ENV: &str = "LIQSOLVE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
    /// Acceptance criteria did not all pass.
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) | CliError::Failed(_) => EXIT_NUMERIC,
            CliError::Io(_) => EXIT_IO,
            CliError::Usage(_) => EXIT_USAGE,
        }
    }
}

impl From<liqsolve_core::Error> for CliError {
    fn from(e: liqsolve_core::Error) -> Self {
        use liqsolve_core::Error as E;
        match e {
            E::Domain(_) | E::Config(_) | E::Mismatch(_) => CliError::Validation(e.to_string()),
            E::Numeric(_) | E::NoConvergence { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "liqsolve",
    version,
    about = "Worst-case optimal liquidation solvers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration (optional for `verify`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Monte Carlo seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to LIQSOLVE_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Second-order BSDE value on the configured model.
    Solve,
    /// Truncation ladder towards the singular solution.
    Singular,
    /// Optimal trajectory, Monte Carlo costs and value verification.
    Liquidate,
    /// Reflected BSDE against the configured barrier.
    Rbsde,
    /// Mollified approximations of the model's driver.
    MollifyDemo,
    /// Reference values from the ODE or closed-form oracles.
    Oracle,
    /// Full acceptance suite.
    Verify,
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("{THREADS_ENV}={v:?} is not a count"))),
        _ => Ok(0),
    }
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let cfg = match (&cli.config, cli.command) {
        (Some(path), _) => {
            let mut cfg = RunConfig::load(path)?;
            if let Some(out) = &cli.out {
                cfg.output.directory = out.clone();
            }
            if let Some(seed) = cli.seed {
                cfg.mc.seed = seed;
            }
            Some(cfg)
        }
        (None, Command::Verify) => None,
        (None, _) => return Err(CliError::Usage("--config <path> is required".into())),
    };
    let dir = cfg
        .as_ref()
        .map(|c| c.output.directory.clone())
        .or_else(|| cli.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut sink = Sink::new(&dir)?;
    if let Some(cfg) = &cfg {
        sink.json("resolved_config.json", cfg)?;
    }
    let summary = match (cli.command, &cfg) {
        (Command::Verify, _) => commands::verify(&mut sink, cli.quiet)?,
        (cmd, Some(cfg)) => match cmd {
            Command::Solve => commands::solve(cfg, &mut sink)?,
            Command::Singular => commands::singular(cfg, &mut sink)?,
            Command::Liquidate => commands::liquidate(cfg, &mut sink)?,
            Command::Rbsde => commands::rbsde(cfg, &mut sink)?,
            Command::MollifyDemo => commands::mollify_demo(cfg, &mut sink)?,
            Command::Oracle => commands::oracle(cfg, &mut sink)?,
            Command::Verify => unreachable!(),
        },
        (_, None) => unreachable!("config checked above"),
    };
    Ok(summary)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let result = thread_count(cli.threads).and_then(|n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| execute(&cli)))
    });
    match result {
        Ok(summary) => {
            if !cli.quiet {
                println!("{summary}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("usage: liqsolve <COMMAND> --config <path> [--out <dir>] [--seed <u64>] [--threads <n>] [--quiet]");
            }
            e.exit_code()
        }
    }
}
