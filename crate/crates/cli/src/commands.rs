use std::path::{Path, PathBuf};

use gridvolterra::identify::{evaluate as run_evaluate, EvaluateConfig};
use gridvolterra::io;
use gridvolterra::powerflow::{self, simulate_series, FlowModel, InjectionProfile, ProfileParams, SweepOptions};
use gridvolterra::solver::{solve_all, BusDiagnostics, SolveOutput, SolverConfig, SweepConfig};
use gridvolterra::{RadialGrid, VoltageSeries};
use log::info;
use serde::Serialize;

use crate::config::{parse_methods, Resolved, RunConfig};
use crate::error::{require_file, CliError};
use crate::{
    EvaluateArgs, IdentifyArgs, PipelineArgs, ProfileFlags, SimulateArgs, SolverFlags, SynthGridArgs,
    SynthProfilesArgs,
};

/// Diagnostics sidecar written next to the kernels.
#[derive(Debug, Serialize)]
struct Diagnostics<'a> {
    centers: Vec<f64>,
    buses: &'a [BusDiagnostics],
}

fn load_grid(path: &Path) -> Result<RadialGrid, CliError> {
    require_file(path)?;
    io::read_grid(path).map_err(|e| CliError::reading(path, e))
}

fn load_series(path: &Path) -> Result<VoltageSeries, CliError> {
    require_file(path)?;
    io::read_series_file(path).map_err(|e| CliError::reading(path, e))
}

fn load_profiles(path: &Path, v0: f64) -> Result<InjectionProfile, CliError> {
    require_file(path)?;
    io::read_profiles_file(path, v0).map_err(|e| CliError::reading(path, e))
}

fn parse_model(s: &str) -> Result<FlowModel, CliError> {
    s.parse().map_err(CliError::InvalidConfig)
}

/// Output files go into existing directories only; checked up front so a
/// long computation does not end in a write error.
fn check_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError::InvalidConfig(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn solver_config(flags: &SolverFlags) -> Result<SolverConfig, CliError> {
    let d = SolverConfig::default();
    let cfg = SolverConfig {
        lambda: flags.lambda.unwrap_or(d.lambda),
        mu: flags.mu.unwrap_or(d.mu),
        tol: flags.tol.unwrap_or(d.tol),
        max_iter: flags.max_iter.unwrap_or(d.max_iter),
        ..d
    };
    cfg.validate().map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    Ok(cfg)
}

fn profile_params(flags: &ProfileFlags) -> ProfileParams {
    let d = ProfileParams::default();
    ProfileParams {
        base_load: flags.base_load.unwrap_or(d.base_load),
        volatility: flags.volatility.unwrap_or(d.volatility),
        solar_fraction: flags.solar_fraction.unwrap_or(d.solar_fraction),
        autocorrelation: flags.autocorrelation.unwrap_or(d.autocorrelation),
        common_share: flags.common_share.unwrap_or(d.common_share),
        v0: flags.v0.unwrap_or(d.v0),
    }
}

fn write_fit(kernels_path: &Path, diag_path: &Path, fit: &SolveOutput) -> Result<(), CliError> {
    io::write_kernels(kernels_path, &fit.kernels).map_err(|e| CliError::writing(kernels_path, e))?;
    let diag = Diagnostics {
        centers: fit.centers.iter().copied().collect(),
        buses: &fit.diagnostics,
    };
    io::write_json(diag_path, &diag).map_err(|e| CliError::writing(diag_path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::writing(dir, e))
}

pub fn synth_grid(a: SynthGridArgs) -> Result<(), CliError> {
    if !a.degree_bias.is_finite() {
        return Err(CliError::InvalidConfig(format!("degree bias {}", a.degree_bias)));
    }
    check_parent(&a.out)?;
    let grid = RadialGrid::random(a.buses, a.seed.seed, a.degree_bias)
        .map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    io::write_grid(&a.out, &grid).map_err(|e| CliError::writing(&a.out, e))
}

pub fn synth_profiles(a: SynthProfilesArgs) -> Result<(), CliError> {
    let grid = load_grid(&a.grid)?;
    check_parent(&a.out)?;
    let params = profile_params(&a.params);
    let prof = powerflow::synth_profiles(&grid, a.samples, a.seed.seed, &params)
        .map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    io::write_profiles_file(&a.out, &prof).map_err(|e| CliError::writing(&a.out, e))
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let model = parse_model(&a.model)?;
    if !(a.noise_std.is_finite() && a.noise_std >= 0.0) {
        return Err(CliError::InvalidConfig(format!("noise std {}", a.noise_std)));
    }
    if !(a.pf_tol > 0.0 && a.pf_max_iter >= 1) {
        return Err(CliError::InvalidConfig("power flow tolerance must be > 0 and max_iter ≥ 1".into()));
    }
    let grid = load_grid(&a.grid)?;
    let prof = load_profiles(&a.profiles, a.v0)?;
    check_parent(&a.out)?;
    let opts = SweepOptions {
        tol: a.pf_tol,
        max_iter: a.pf_max_iter,
    };
    let series = simulate_series(&grid, &prof, model, &opts)
        .and_then(|s| s.with_noise(a.noise_std, a.seed.seed))
        .map_err(|e| CliError::stage("simulate", e))?;
    io::write_series_file(&a.out, &series).map_err(|e| CliError::writing(&a.out, e))
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".diagnostics.json");
    out.with_file_name(name)
}

pub fn identify(a: IdentifyArgs) -> Result<(), CliError> {
    let cfg = solver_config(&a.solver)?;
    let series = load_series(&a.series)?;
    let diag_path = a.diagnostics.clone().unwrap_or_else(|| sidecar(&a.out));
    check_parent(&a.out)?;
    check_parent(&diag_path)?;
    let sweep = a.sweep.then(SweepConfig::default);
    let fit = solve_all(&series, &cfg, sweep.as_ref()).map_err(|e| CliError::stage("identify", e))?;
    write_fit(&a.out, &diag_path, &fit)
}

fn evaluate_config(methods: Vec<gridvolterra::Method>, solver: SolverConfig, sweep: bool) -> EvaluateConfig {
    EvaluateConfig {
        methods,
        solver,
        sweep: sweep.then(SweepConfig::default),
        ..EvaluateConfig::default()
    }
}

fn write_evaluation(
    dir: &Path,
    report: &gridvolterra::EvaluationReport,
    fit: Option<&SolveOutput>,
) -> Result<(), CliError> {
    create_dir(dir)?;
    io::write_report(dir, report).map_err(|e| CliError::writing(dir, e))?;
    if let Some(fit) = fit {
        write_fit(&dir.join("kernels.json"), &dir.join("diagnostics.json"), fit)?;
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let methods = parse_methods(a.methods.iter().map(String::as_str))?;
    let solver = solver_config(&a.solver)?;
    let grid = load_grid(&a.grid)?;
    let series = load_series(&a.series)?;
    let cfg = evaluate_config(methods, solver, !a.no_sweep);
    let (report, fit) = run_evaluate(&grid, &series, &cfg).map_err(|e| CliError::stage("evaluate", e))?;
    write_evaluation(&a.out, &report, fit.as_ref())
}

fn merge(a: &PipelineArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($flag:expr => $slot:expr) => {
            if let Some(v) = $flag.clone() {
                $slot = Some(v);
            }
        };
    }
    set!(a.out => cfg.output);
    set!(a.seed => cfg.seed);
    set!(a.noise_std => cfg.noise_std);
    set!(a.buses => cfg.grid.buses);
    set!(a.samples => cfg.profiles.samples);
    set!(a.solver.lambda => cfg.solver.lambda);
    set!(a.solver.mu => cfg.solver.mu);
    set!(a.solver.tol => cfg.solver.tol);
    set!(a.solver.max_iter => cfg.solver.max_iter);
    set!(a.methods => cfg.evaluate.methods);
    if let Some(g) = &a.grid {
        cfg.grid.path = Some(g.clone());
    }
    if let Some(p) = &a.profiles {
        cfg.profiles.path = Some(p.clone());
    }
    if let Some(m) = &a.model {
        cfg.model = Some(parse_model(m)?);
    }
    if a.sweep {
        cfg.solver.sweep = Some(true);
    }
    if a.no_sweep {
        cfg.solver.sweep = Some(false);
    }
    Ok(cfg)
}

pub fn pipeline(a: PipelineArgs) -> Result<(), CliError> {
    let run = merge(&a)?.resolve()?;
    if a.dry_run {
        print!("{}", run.to_toml()?);
        return Ok(());
    }
    execute(&run)
}

fn execute(run: &Resolved) -> Result<(), CliError> {
    let grid = match &run.grid_path {
        Some(p) => load_grid(p)?,
        None => RadialGrid::random(run.buses, run.seed, run.degree_bias).map_err(|e| CliError::stage("synth-grid", e))?,
    };
    let profile = match &run.profiles_path {
        Some(p) => load_profiles(p, run.profile.v0)?,
        None => powerflow::synth_profiles(&grid, run.samples, run.seed, &run.profile)
            .map_err(|e| CliError::stage("synth-profiles", e))?,
    };
    info!("simulating {} buses over {} slots", grid.n(), profile.len());
    let clean = simulate_series(&grid, &profile, run.model, &SweepOptions::default())
        .map_err(|e| CliError::stage("simulate", e))?;
    let series = clean
        .with_noise(run.noise_std, run.seed)
        .map_err(|e| CliError::stage("simulate", e))?;
    let cfg = evaluate_config(run.parsed_methods()?, run.solver_config(), run.sweep);
    let (report, fit) = run_evaluate(&grid, &series, &cfg).map_err(|e| CliError::stage("evaluate", e))?;

    let dir = &run.output;
    create_dir(dir)?;
    let path = dir.join("grid.json");
    io::write_grid(&path, &grid).map_err(|e| CliError::writing(&path, e))?;
    let path = dir.join("profiles.csv");
    io::write_profiles_file(&path, &profile).map_err(|e| CliError::writing(&path, e))?;
    let path = dir.join("series.csv");
    io::write_series_file(&path, &series).map_err(|e| CliError::writing(&path, e))?;
    let path = dir.join("run.toml");
    let text = run.to_toml()?;
    std::fs::write(&path, text).map_err(|e| CliError::writing(&path, e))?;
    write_evaluation(&dir.join("report"), &report, fit.as_ref())?;
    Ok(())
}
