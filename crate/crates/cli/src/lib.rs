//! Command-line driver: parses arguments, loads the TOML run configuration
//! and dispatches to the subcommands.

pub mod commands;
pub mod config;
pub mod output;

use clap::{Args, Parser, Subcommand};
use config::{ConfigError, RunConfig};
use output::{OutputError, RunDir};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Core(#[from] famhe_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Core(famhe_core::Error::Config(_)) => 2,
            CliError::Output(_) | CliError::Core(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "famhe", version, about = "Family Hermite-Einstein laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: the config's `out`, else ./out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the acceptance checks.
    Verify {
        /// Comma-separated check numbers; all checks when omitted.
        #[arg(long, value_delimiter = ',')]
        checks: Vec<u32>,
    },
    /// Run the family flow on a torus base.
    Flow,
    /// Solve the Dirichlet problem on an annulus by running the flow.
    Dirichlet,
    /// Sweep k and measure the adiabatic defect.
    Adiabatic,
    /// Tabulate the moment map of the configured deformation.
    Nu,
    /// Summarize earlier run directories.
    Report {
        /// Run directories containing manifest.json and report.json.
        runs: Vec<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Verify { .. } => "verify",
            Command::Flow => "flow",
            Command::Dirichlet => "dirichlet",
            Command::Adiabatic => "adiabatic",
            Command::Nu => "nu",
            Command::Report { .. } => "report",
            Command::Config => "config",
        }
    }
}

pub fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.verify.seed = s;
    }
    Ok(cfg)
}

/// Runs a parsed command line; Ok(false) means a check failed.
pub fn run(cli: &Cli) -> Result<bool, CliError> {
    let start = Instant::now();
    let cfg = load_config(&cli.common)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(true);
    }
    let out = cli.common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut dir = RunDir::create(&out)?;
    let q = cli.common.quiet;
    let passed = match &cli.command {
        Command::Verify { checks } => commands::verify(&cfg, &mut dir, checks, q)?,
        Command::Flow => commands::flow(&cfg, &mut dir, q)?,
        Command::Dirichlet => commands::dirichlet(&cfg, &mut dir, q)?,
        Command::Adiabatic => commands::adiabatic(&cfg, &mut dir, q)?,
        Command::Nu => commands::nu_table(&cfg, &mut dir, q)?,
        Command::Report { runs } => commands::report(runs, &mut dir, q)?,
        Command::Config => unreachable!("handled above"),
    };
    if !q {
        println!("wrote {}", dir.root().display());
    }
    dir.manifest(cli.command.name(), &cfg, passed, start.elapsed().as_secs_f64())?;
    Ok(passed)
}

pub fn main_with(cli: Cli) -> ExitCode {
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("famhe: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
