//! `gridvolterra`: synthesize feeders and profiles, simulate voltage series,
//! fit graph Volterra kernels and evaluate topology recovery.

mod commands;
mod config;
mod error;
mod schema;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "gridvolterra", version, about)]
struct Cli {
    /// Worker threads for per-time-slot and per-bus parallelism.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a random radial feeder and write it as grid JSON.
    SynthGrid(SynthGridArgs),
    /// Synthesize load/solar injection profiles for a grid.
    SynthProfiles(SynthProfilesArgs),
    /// Solve the power flow over time and write the voltage series.
    Simulate(SimulateArgs),
    /// Fit per-bus Volterra kernels to a voltage series.
    Identify(IdentifyArgs),
    /// Score recovered edges against a grid and write ROC/AUC reports.
    Evaluate(EvaluateArgs),
    /// Run synthesize → simulate → identify → evaluate from one config.
    Pipeline(PipelineArgs),
    /// Print the file-format schemas and version as JSON.
    Schema,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Random seed (falls back to GRIDVOLTERRA_SEED, then 0).
    #[arg(long, env = "GRIDVOLTERRA_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthGridArgs {
    /// Number of non-substation buses.
    #[arg(short = 'n', long)]
    pub buses: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Exponent of the depth weighting when sampling parents.
    #[arg(long, default_value_t = 1.0)]
    pub degree_bias: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileFlags {
    #[arg(long)]
    pub base_load: Option<f64>,
    #[arg(long)]
    pub volatility: Option<f64>,
    #[arg(long)]
    pub solar_fraction: Option<f64>,
    #[arg(long)]
    pub autocorrelation: Option<f64>,
    #[arg(long)]
    pub common_share: Option<f64>,
    /// Substation squared voltage magnitude.
    #[arg(long)]
    pub v0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthProfilesArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// Number of time slots.
    #[arg(short = 'T', long = "samples")]
    pub samples: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[command(flatten)]
    pub params: ProfileFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub profiles: PathBuf,
    /// `exact` (branch flow) or `linear` (LinDistFlow).
    #[arg(long, default_value = "exact")]
    pub model: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Standard deviation of additive Gaussian measurement noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Substation squared voltage magnitude.
    #[arg(long, default_value_t = 1.0)]
    pub v0: f64,
    /// Power flow mismatch tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub pf_tol: f64,
    #[arg(long, default_value_t = 200)]
    pub pf_max_iter: usize,
}

#[derive(Debug, Args)]
pub struct SolverFlags {
    /// ℓ1 weight (ignored with --sweep).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Row-group weight (ignored with --sweep).
    #[arg(long)]
    pub mu: Option<f64>,
    /// Relative objective change that stops the solver.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub series: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Select (λ, μ) per bus on a geometric grid validated on the last 20% of
    /// the series.
    #[arg(long)]
    pub sweep: bool,
    /// Kernel JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Diagnostics sidecar (defaults to `<out>.diagnostics.json`).
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub series: PathBuf,
    /// Comma-separated subset of volterra,pc,concentration.
    #[arg(long, default_value = "volterra,pc,concentration", value_delimiter = ',')]
    pub methods: Vec<String>,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Use --lambda/--mu as given instead of the per-bus sweep.
    #[arg(long)]
    pub no_sweep: bool,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Only validate the configuration and print the resolved run.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config file; GRIDVOLTERRA_SEED is used when neither
    /// sets a seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub buses: Option<usize>,
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    #[arg(short = 'T', long = "samples")]
    pub samples: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[arg(long, conflicts_with = "no_sweep")]
    pub sweep: bool,
    #[arg(long)]
    pub no_sweep: bool,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs as usize)
        .build()
        .map_err(|e| CliError::InvalidConfig(format!("cannot start {} worker threads: {e}", cli.jobs)))
        .and_then(|pool| pool.install(|| run(cli.command)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::SynthGrid(a) => commands::synth_grid(a),
        Command::SynthProfiles(a) => commands::synth_profiles(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Identify(a) => commands::identify(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Pipeline(a) => commands::pipeline(a),
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&schema::schema()).expect("static schema"));
            Ok(())
        }
    }
}
