use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod svg;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input files (exit 1).
    Validation(String),
    /// Solver, integrator or other numerical failure (exit 2).
    Numerical(String),
    /// The certifier found no feasible `N` (exit 3).
    Infeasible(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Infeasible(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
        }
    }
}

impl From<delaypde::Error> for CliError {
    fn from(e: delaypde::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "delaypde", version, about = "Boundary output-feedback stabilization of delayed reaction-diffusion PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues, boundary traces and Weyl-bound report.
    Eigs(Common),
    /// Gain synthesis (or verification of given gains).
    Synth(Common),
    /// Smallest N with a stability certificate.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Also write the SDPA feasibility problem at this N.
        #[arg(long)]
        export_sdpa: Option<usize>,
    },
    /// One closed-loop run at the configured delay.
    Simulate(Common),
    /// Closed-loop runs over a list of delays.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated delays; overrides `sweep.delays`.
        #[arg(long, value_delimiter = ',')]
        delays: Option<Vec<f64>>,
    },
}

fn configure_threads() {
    let Ok(raw) = std::env::var("DELAYPDE_THREADS") else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not cap threads at {n}: {e}");
            }
        }
        _ => log::warn!("ignoring DELAYPDE_THREADS = {raw:?}; expected a positive integer"),
    }
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.output.directory = out.clone();
    }
    let out = cfg.output.directory.clone();
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Eigs(c) => {
            let (cfg, out) = load(&c)?;
            commands::cmd_eigs(&cfg, &out)
        }
        Command::Synth(c) => {
            let (cfg, out) = load(&c)?;
            commands::cmd_synth(&cfg, &out)
        }
        Command::Certify { common, export_sdpa } => {
            let (cfg, out) = load(&common)?;
            commands::cmd_certify(&cfg, &out, export_sdpa)
        }
        Command::Simulate(c) => {
            let (cfg, out) = load(&c)?;
            commands::cmd_simulate(&cfg, &out)
        }
        Command::Sweep { common, delays } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(d) = delays {
                cfg.sweep.delays = d;
                cfg.validate()?;
            }
            commands::cmd_sweep(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
