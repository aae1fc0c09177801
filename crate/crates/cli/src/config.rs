//! Pipeline run configuration: a TOML document whose keys mirror the
//! `pipeline` flags. Flags override the file; unset keys take defaults.

use std::path::{Path, PathBuf};

use gridvolterra::identify::Method;
use gridvolterra::powerflow::{FlowModel, ProfileParams};
use gridvolterra::solver::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::error::{require_file, CliError};

pub const DEFAULT_BUSES: usize = 20;
pub const DEFAULT_SAMPLES: usize = 240;
pub const DEFAULT_NOISE_STD: f64 = 1e-4;
pub const SEED_ENV: &str = "GRIDVOLTERRA_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub model: Option<FlowModel>,
    pub noise_std: Option<f64>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub profiles: ProfilesSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Existing grid file; otherwise a random feeder is drawn.
    pub path: Option<PathBuf>,
    pub buses: Option<usize>,
    pub degree_bias: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilesSection {
    /// Existing profiles CSV; otherwise profiles are synthesized.
    pub path: Option<PathBuf>,
    pub samples: Option<usize>,
    pub base_load: Option<f64>,
    pub volatility: Option<f64>,
    pub solar_fraction: Option<f64>,
    pub autocorrelation: Option<f64>,
    pub common_share: Option<f64>,
    pub v0: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub sweep: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub methods: Option<Vec<String>>,
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        require_file(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| CliError::BadInput {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::BadInput {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        rebase(&mut cfg.output);
        rebase(&mut cfg.grid.path);
        rebase(&mut cfg.profiles.path);
        Ok(cfg)
    }

    /// Fills every unset key with its default and checks ranges and file
    /// references.
    pub fn resolve(self) -> Result<Resolved, CliError> {
        let d = ProfileParams::default();
        let s = SolverConfig::default();
        let invalid = |msg: String| Err(CliError::InvalidConfig(msg));

        let output = match self.output {
            Some(o) => o,
            None => return invalid("no output directory given (`output` or --out)".into()),
        };
        if let Some(p) = &self.grid.path {
            require_file(p)?;
        }
        if let Some(p) = &self.profiles.path {
            require_file(p)?;
        }
        let seed = match self.seed {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => match v.trim().parse() {
                    Ok(s) => s,
                    Err(_) => return invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer")),
                },
                Err(_) => 0,
            },
        };
        let r = Resolved {
            seed,
            output,
            model: self.model.unwrap_or_default(),
            noise_std: self.noise_std.unwrap_or(DEFAULT_NOISE_STD),
            grid_path: self.grid.path,
            buses: self.grid.buses.unwrap_or(DEFAULT_BUSES),
            degree_bias: self.grid.degree_bias.unwrap_or(1.0),
            profiles_path: self.profiles.path,
            samples: self.profiles.samples.unwrap_or(DEFAULT_SAMPLES),
            profile: ProfileParams {
                base_load: self.profiles.base_load.unwrap_or(d.base_load),
                volatility: self.profiles.volatility.unwrap_or(d.volatility),
                solar_fraction: self.profiles.solar_fraction.unwrap_or(d.solar_fraction),
                autocorrelation: self.profiles.autocorrelation.unwrap_or(d.autocorrelation),
                common_share: self.profiles.common_share.unwrap_or(d.common_share),
                v0: self.profiles.v0.unwrap_or(d.v0),
            },
            lambda: self.solver.lambda.unwrap_or(s.lambda),
            mu: self.solver.mu.unwrap_or(s.mu),
            tol: self.solver.tol.unwrap_or(s.tol),
            max_iter: self.solver.max_iter.unwrap_or(s.max_iter),
            sweep: self.solver.sweep.unwrap_or(true),
            methods: match self.evaluate.methods {
                Some(m) => m,
                None => Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            },
        };
        r.validate()?;
        Ok(r)
    }
}

/// Fully specified run.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub seed: u64,
    pub output: PathBuf,
    pub model: FlowModel,
    pub noise_std: f64,
    pub grid_path: Option<PathBuf>,
    pub buses: usize,
    pub degree_bias: f64,
    pub profiles_path: Option<PathBuf>,
    pub samples: usize,
    pub profile: ProfileParams,
    pub lambda: f64,
    pub mu: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub sweep: bool,
    pub methods: Vec<String>,
}

impl Resolved {
    /// The run as a config document that reproduces it when loaded.
    pub fn to_toml(&self) -> Result<String, CliError> {
        let p = &self.profile;
        let synth_grid = self.grid_path.is_none();
        let synth_prof = self.profiles_path.is_none();
        let doc = RunConfig {
            seed: Some(self.seed),
            output: Some(self.output.clone()),
            model: Some(self.model),
            noise_std: Some(self.noise_std),
            grid: GridSection {
                path: self.grid_path.clone(),
                buses: synth_grid.then_some(self.buses),
                degree_bias: synth_grid.then_some(self.degree_bias),
            },
            profiles: ProfilesSection {
                path: self.profiles_path.clone(),
                samples: synth_prof.then_some(self.samples),
                base_load: synth_prof.then_some(p.base_load),
                volatility: synth_prof.then_some(p.volatility),
                solar_fraction: synth_prof.then_some(p.solar_fraction),
                autocorrelation: synth_prof.then_some(p.autocorrelation),
                common_share: synth_prof.then_some(p.common_share),
                v0: Some(p.v0),
            },
            solver: SolverSection {
                lambda: Some(self.lambda),
                mu: Some(self.mu),
                tol: Some(self.tol),
                max_iter: Some(self.max_iter),
                sweep: Some(self.sweep),
            },
            evaluate: EvaluateSection {
                methods: Some(self.methods.clone()),
            },
        };
        toml::to_string(&doc).map_err(|e| CliError::InvalidConfig(e.to_string()))
    }

    fn validate(&self) -> Result<(), CliError> {
        let mut bad = Vec::new();
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.noise_std) {
            bad.push(format!("noise_std = {}", self.noise_std));
        }
        if self.grid_path.is_none() && self.buses == 0 {
            bad.push("grid.buses must be at least 1".into());
        }
        if !self.degree_bias.is_finite() {
            bad.push(format!("grid.degree_bias = {}", self.degree_bias));
        }
        if self.profiles_path.is_none() && self.samples < 2 {
            bad.push("profiles.samples must be at least 2".into());
        }
        let p = &self.profile;
        if !(finite_nonneg(p.base_load) && finite_nonneg(p.volatility)) {
            bad.push("profiles.base_load and profiles.volatility must be finite and ≥ 0".into());
        }
        if !(0.0..=1.0).contains(&p.solar_fraction) || !(0.0..=1.0).contains(&p.common_share) {
            bad.push("profiles.solar_fraction and profiles.common_share must lie in [0, 1]".into());
        }
        if !(p.autocorrelation.abs() < 1.0) {
            bad.push(format!("profiles.autocorrelation = {} (need |a| < 1)", p.autocorrelation));
        }
        if !(p.v0.is_finite() && p.v0 > 0.0) {
            bad.push(format!("profiles.v0 = {}", p.v0));
        }
        if let Err(e) = self.solver_config().validate() {
            bad.push(e.to_string());
        }
        if let Err(e) = self.parsed_methods() {
            bad.push(e.to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::InvalidConfig(bad.join("; ")))
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            lambda: self.lambda,
            mu: self.mu,
            tol: self.tol,
            max_iter: self.max_iter,
            ..SolverConfig::default()
        }
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>, CliError> {
        parse_methods(self.methods.iter().map(String::as_str))
    }
}

pub fn parse_methods<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Vec<Method>, CliError> {
    let mut out: Vec<Method> = Vec::new();
    for name in names {
        let m: Method = name.parse().map_err(|e: gridvolterra::IdentifyError| CliError::InvalidConfig(e.to_string()))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::InvalidConfig("no evaluation methods selected".into()));
    }
    Ok(out)
}
