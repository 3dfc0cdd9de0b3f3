//! `geovar`: runs geodesic, boundary-value, degeneracy, perturbation and
//! obstruction analyses from JSON configs and writes deterministic reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 boundary condition not admissible under `--require-admissible`.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("boundary condition is not admissible")]
    NotAdmissible,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::NotAdmissible => 4,
        }
    }
}

impl From<geovar::Error> for CliError {
    fn from(e: geovar::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "geovar", version, about = "Geodesic variational analyses on semi-Riemannian charts")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON problem configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for report files (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides integrator and solver tolerances.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Overrides every random seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (the GEOVAR_THREADS variable takes precedence).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Exit with code 4 when the boundary condition is not admissible.
    #[arg(long, global = true)]
    require_admissible: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a geodesic; writes a trajectory CSV and a summary.
    Geodesic,
    /// Conjugate points along a geodesic.
    Conjugate,
    /// Solve a boundary-value problem; reports admissibility and degeneracy.
    Bvp,
    /// Classify the degeneracy of a geodesic.
    Classify,
    /// Census of closed geodesics in a coordinate box.
    Census,
    /// Bump perturbation of a degenerate boundary-value solution.
    Perturb,
    /// Topological existence of metrics of a given index.
    Obstruct(ObstructArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("manifold").required(true).args(["sphere", "surface", "generic"])))]
pub struct ObstructArgs {
    /// The sphere of this dimension.
    #[arg(long)]
    sphere: Option<usize>,
    /// A compact surface: sphere, torus, klein_bottle, projective_plane,
    /// orientable (with --genus) or non_orientable (with --crosscaps).
    #[arg(long)]
    surface: Option<String>,
    /// A manifold described by --compact, --orientable, --dim and --chi.
    #[arg(long)]
    generic: bool,
    #[arg(long)]
    genus: Option<u32>,
    #[arg(long)]
    crosscaps: Option<u32>,
    #[arg(long, action = clap::ArgAction::Set)]
    compact: Option<bool>,
    #[arg(long, action = clap::ArgAction::Set)]
    orientable: Option<bool>,
    #[arg(long)]
    dim: Option<usize>,
    /// Euler characteristic, when known.
    #[arg(long, allow_hyphen_values = true)]
    chi: Option<i64>,
    /// Index of the metric (1 for Lorentzian).
    #[arg(long, default_value_t = 1)]
    index: usize,
}

fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let env = match std::env::var("GEOVAR_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| CliError::Config(format!("GEOVAR_THREADS={v} is not a count")))?),
        Err(_) => None,
    };
    if let Some(n) = env.or(flag) {
        if n == 0 {
            return Err(CliError::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads(cli.threads)?;
    if let Command::Obstruct(args) = &cli.command {
        return commands::obstruct(cli, args);
    }
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = config::ProblemConfig::parse(&text)?;
    match cli.command {
        Command::Geodesic => commands::geodesic(cli, &cfg),
        Command::Conjugate => commands::conjugate(cli, &cfg),
        Command::Bvp => commands::bvp(cli, &cfg),
        Command::Classify => commands::classify(cli, &cfg),
        Command::Census => commands::census(cli, &cfg),
        Command::Perturb => commands::perturb(cli, &cfg),
        Command::Obstruct(_) => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("geovar: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
