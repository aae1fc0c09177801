//! Branch flow power flow on radial feeders.
//!
//! All quantities are per-unit and `v` always denotes the *squared* voltage
//! magnitude. Injections follow the net-injection convention: a load is a
//! negative `p`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::PowerFlowError;
use crate::grid::{RadialGrid, ROOT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Solution of the branch flow equations for one time slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowState {
    /// Squared voltage magnitudes of buses `1..=N`.
    pub v: DVector<f64>,
    /// Complex power flowing from `π_n` into line `n`.
    pub s: Vec<Complex64>,
    /// Squared current magnitudes.
    pub ell: DVector<f64>,
    pub iterations: usize,
}

/// Maximum absolute residual of each branch flow equation:
/// nodal balance, voltage drop and the current/flow relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub balance: f64,
    pub voltage: f64,
    pub current: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.balance.max(self.voltage).max(self.current)
    }
}

fn impedance(grid: &RadialGrid, bus: usize) -> Complex64 {
    let l = grid.line(bus);
    Complex64::new(l.r, l.x)
}

fn parent_voltage(grid: &RadialGrid, v: &DVector<f64>, v0: f64, bus: usize) -> f64 {
    match grid.parent(bus) {
        ROOT => v0,
        p => v[p - 1],
    }
}

fn check_injections(grid: &RadialGrid, p: &[f64], q: &[f64], v0: f64) -> Result<(), PowerFlowError> {
    if p.len() != grid.n() || q.len() != grid.n() {
        return Err(PowerFlowError::DimensionMismatch(format!(
            "grid has {} buses, injections have {} / {}",
            grid.n(),
            p.len(),
            q.len()
        )));
    }
    if !(v0.is_finite() && v0 > 0.0) {
        return Err(PowerFlowError::InvalidInput(format!("substation voltage {v0}")));
    }
    if p.iter().chain(q).any(|x| !x.is_finite()) {
        return Err(PowerFlowError::InvalidInput("non-finite injection".into()));
    }
    Ok(())
}

/// Evaluates the three branch flow equations at `state`.
pub fn residuals(
    grid: &RadialGrid,
    p: &[f64],
    q: &[f64],
    v0: f64,
    state: &PowerFlowState,
) -> Residuals {
    let mut out = Residuals {
        balance: 0.0,
        voltage: 0.0,
        current: 0.0,
    };
    for bus in 1..=grid.n() {
        let k = bus - 1;
        let z = impedance(grid, bus);
        let inj = Complex64::new(p[k], q[k]);
        let downstream: Complex64 = grid.children(bus).iter().map(|&c| state.s[c - 1]).sum();
        let bal = downstream - state.s[k] + z * state.ell[k] - inj;
        let vp = parent_voltage(grid, &state.v, v0, bus);
        let drop = vp - 2.0 * (z.conj() * state.s[k]).re + state.ell[k] * z.norm_sqr() - state.v[k];
        let cur = state.s[k].norm_sqr() - vp * state.ell[k];
        out.balance = out.balance.max(bal.norm());
        out.voltage = out.voltage.max(drop.abs());
        out.current = out.current.max(cur.abs());
    }
    out
}

/// Solves the exact branch flow model by backward/forward sweep from a flat
/// start. Converged when both the largest voltage update and the largest
/// equation residual are within `opts.tol`.
pub fn solve_exact(
    grid: &RadialGrid,
    p: &[f64],
    q: &[f64],
    v0: f64,
    opts: &SweepOptions,
) -> Result<PowerFlowState, PowerFlowError> {
    check_injections(grid, p, q, v0)?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(PowerFlowError::InvalidInput(format!(
            "tol={} max_iter={}",
            opts.tol, opts.max_iter
        )));
    }
    let n = grid.n();
    let order = grid.topological_order();
    let mut state = PowerFlowState {
        v: DVector::from_element(n, v0),
        s: vec![Complex64::new(0.0, 0.0); n],
        ell: DVector::zeros(n),
        iterations: 0,
    };
    let mut residual = f64::INFINITY;

    for it in 1..=opts.max_iter {
        // Backward: aggregate flows from the leaves with the current losses.
        for &bus in order.iter().rev() {
            let k = bus - 1;
            let downstream: Complex64 = grid.children(bus).iter().map(|&c| state.s[c - 1]).sum();
            state.s[k] = downstream + impedance(grid, bus) * state.ell[k] - Complex64::new(p[k], q[k]);
        }

        // Forward: voltage drops from the root.
        let mut dv: f64 = 0.0;
        for &bus in order {
            let k = bus - 1;
            let z = impedance(grid, bus);
            let vp = parent_voltage(grid, &state.v, v0, bus);
            let v_new = vp - 2.0 * (z.conj() * state.s[k]).re + state.ell[k] * z.norm_sqr();
            if !(v_new.is_finite() && v_new > 0.0) {
                return Err(PowerFlowError::NonPositiveVoltage { bus });
            }
            dv = dv.max((v_new - state.v[k]).abs());
            state.v[k] = v_new;
        }

        for bus in 1..=n {
            let vp = parent_voltage(grid, &state.v, v0, bus);
            state.ell[bus - 1] = state.s[bus - 1].norm_sqr() / vp;
        }

        state.iterations = it;
        residual = residuals(grid, p, q, v0, &state).max();
        if !residual.is_finite() {
            break;
        }
        if dv <= opts.tol && residual <= opts.tol {
            return Ok(state);
        }
    }
    Err(PowerFlowError::NoConvergence {
        iterations: state.iterations,
        residual,
    })
}

/// Precomputed LinDistFlow model `v = 2Rp + 2Xq + v0·1`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub r: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(grid: &RadialGrid) -> Result<Self, PowerFlowError> {
        let (r, x) = grid.sensitivity_matrices()?;
        Ok(Self { r, x })
    }

    pub fn solve(&self, p: &[f64], q: &[f64], v0: f64) -> DVector<f64> {
        let p = DVector::from_column_slice(p);
        let q = DVector::from_column_slice(q);
        (&self.r * p + &self.x * q) * 2.0 + DVector::from_element(self.r.nrows(), v0)
    }
}

/// LinDistFlow voltages for a single operating point.
pub fn solve_linear(
    grid: &RadialGrid,
    p: &[f64],
    q: &[f64],
    v0: f64,
) -> Result<DVector<f64>, PowerFlowError> {
    check_injections(grid, p, q, v0)?;
    Ok(LinearModel::new(grid)?.solve(p, q, v0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FlowModel {
    #[default]
    Exact,
    Linear,
}

impl std::str::FromStr for FlowModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "linear" => Ok(Self::Linear),
            other => Err(format!("unknown power flow model {other:?} (expected exact|linear)")),
        }
    }
}

/// Net active/reactive injections over time, `T × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionProfile {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Squared substation voltage.
    pub v0: f64,
}

impl InjectionProfile {
    pub fn new(p: DMatrix<f64>, q: DMatrix<f64>, v0: f64) -> Result<Self, PowerFlowError> {
        if p.shape() != q.shape() {
            return Err(PowerFlowError::DimensionMismatch(format!(
                "p is {:?}, q is {:?}",
                p.shape(),
                q.shape()
            )));
        }
        if p.nrows() == 0 {
            return Err(PowerFlowError::InvalidInput("profile has no time slots".into()));
        }
        if p.iter().chain(q.iter()).any(|x| !x.is_finite()) || !(v0.is_finite() && v0 > 0.0) {
            return Err(PowerFlowError::InvalidInput("non-finite profile entry".into()));
        }
        Ok(Self { p, q, v0 })
    }

    pub fn len(&self) -> usize {
        self.p.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.p.nrows() == 0
    }

    pub fn buses(&self) -> usize {
        self.p.ncols()
    }

    fn row(&self, t: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.p.row(t).iter().copied().collect(),
            self.q.row(t).iter().copied().collect(),
        )
    }
}

/// Squared voltage magnitudes over time; row `t` holds `v(t)` for buses `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSeries {
    values: DMatrix<f64>,
    timestamps: Vec<i64>,
}

impl VoltageSeries {
    pub fn new(values: DMatrix<f64>, timestamps: Vec<i64>) -> Result<Self, PowerFlowError> {
        if values.nrows() != timestamps.len() {
            return Err(PowerFlowError::DimensionMismatch(format!(
                "{} rows but {} timestamps",
                values.nrows(),
                timestamps.len()
            )));
        }
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(PowerFlowError::InvalidInput("empty voltage series".into()));
        }
        for t in 0..values.nrows() {
            for b in 0..values.ncols() {
                let x = values[(t, b)];
                if !(x.is_finite() && x > 0.0) {
                    return Err(PowerFlowError::InvalidInput(format!(
                        "squared voltage at t={t}, bus {} must be positive and finite",
                        b + 1
                    )));
                }
            }
        }
        Ok(Self { values, timestamps })
    }

    /// Series indexed `0..T`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self, PowerFlowError> {
        let t = values.nrows() as i64;
        Self::new(values, (0..t).collect())
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    /// Number of time slots `T`.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Number of non-root buses `N`.
    pub fn buses(&self) -> usize {
        self.values.ncols()
    }

    /// Rows `range` as a new series.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self, PowerFlowError> {
        let rows = range.len();
        Self::new(
            self.values.rows(range.start, rows).into_owned(),
            self.timestamps[range].to_vec(),
        )
    }

    /// Adds i.i.d. zero-mean Gaussian measurement noise with standard
    /// deviation `std` to every entry.
    pub fn with_noise(&self, std: f64, seed: u64) -> Result<Self, PowerFlowError> {
        if !(std.is_finite() && std >= 0.0) {
            return Err(PowerFlowError::InvalidInput(format!("noise std {std}")));
        }
        if std == 0.0 {
            return Ok(self.clone());
        }
        let normal = Normal::new(0.0, std).expect("valid std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = self.values.clone();
        // Column-major fill so the draw order is fixed.
        for x in values.iter_mut() {
            *x += normal.sample(&mut rng);
        }
        Self::new(values, self.timestamps.clone())
    }
}

/// Solves every time slot of `profile` with the selected model.
pub fn simulate_series(
    grid: &RadialGrid,
    profile: &InjectionProfile,
    model: FlowModel,
    opts: &SweepOptions,
) -> Result<VoltageSeries, PowerFlowError> {
    let n = grid.n();
    if profile.buses() != n {
        return Err(PowerFlowError::DimensionMismatch(format!(
            "grid has {n} buses, profile has {}",
            profile.buses()
        )));
    }
    let t_len = profile.len();
    let linear = match model {
        FlowModel::Linear => Some(LinearModel::new(grid)?),
        FlowModel::Exact => None,
    };
    let rows: Vec<DVector<f64>> = (0..t_len)
        .into_par_iter()
        .map(|t| {
            let (p, q) = profile.row(t);
            let at = |e| PowerFlowError::AtTime { t, source: Box::new(e) };
            match &linear {
                Some(lin) => {
                    let v = lin.solve(&p, &q, profile.v0);
                    if let Some(k) = v.iter().position(|x| !(*x > 0.0)) {
                        return Err(at(PowerFlowError::NonPositiveVoltage { bus: k + 1 }));
                    }
                    Ok(v)
                }
                None => solve_exact(grid, &p, &q, profile.v0, opts).map(|s| s.v).map_err(at),
            }
        })
        .collect::<Result<_, _>>()?;
    let mut values = DMatrix::zeros(t_len, n);
    for (t, v) in rows.iter().enumerate() {
        values.row_mut(t).copy_from(&v.transpose());
    }
    VoltageSeries::from_matrix(values)
}

/// Knobs of the synthetic load/solar profile generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    /// Mean per-bus active load (pu).
    pub base_load: f64,
    /// Relative size of the temporal fluctuations; `0` gives constant profiles.
    pub volatility: f64,
    /// Probability that a bus hosts rooftop solar.
    pub solar_fraction: f64,
    /// Lag-one autocorrelation of the fluctuation processes.
    pub autocorrelation: f64,
    /// Share of load-fluctuation variance driven by a process common to all
    /// buses (e.g. a shared consumption pattern); `0` makes buses independent.
    pub common_share: f64,
    pub v0: f64,
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self {
            base_load: 0.02,
            volatility: 0.5,
            solar_fraction: 0.3,
            autocorrelation: 0.8,
            common_share: 0.0,
            v0: 1.0,
        }
    }
}

/// Reproducible synthetic injection profiles: per-bus base loads with
/// AR(1) fluctuations and a shared AR(1) irradiance process driving solar
/// generation at a random subset of buses.
pub fn synth_profiles(
    grid: &RadialGrid,
    t_len: usize,
    seed: u64,
    params: &ProfileParams,
) -> Result<InjectionProfile, PowerFlowError> {
    if t_len == 0 {
        return Err(PowerFlowError::InvalidInput("T must be at least 1".into()));
    }
    if !(params.volatility >= 0.0 && params.volatility.is_finite()) {
        return Err(PowerFlowError::InvalidInput(format!("volatility {}", params.volatility)));
    }
    if !(0.0..=1.0).contains(&params.solar_fraction) || !(0.0..=1.0).contains(&params.common_share) || !(0.0..1.0).contains(&params.autocorrelation.abs()) {
        return Err(PowerFlowError::InvalidInput(
            "solar_fraction and common_share must be in [0,1] and |autocorrelation| < 1".into(),
        ));
    }
    let n = grid.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = Uniform::new_inclusive(0.5, 1.5).expect("range");
    let tan_phi = Uniform::new_inclusive(0.2, 0.5).expect("range");
    let a = params.autocorrelation;
    let innov = (1.0 - a * a).sqrt();

    let ar = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut out = Vec::with_capacity(t_len);
        let mut x: f64 = StandardNormal.sample(rng);
        for _ in 0..t_len {
            out.push(x);
            let e: f64 = StandardNormal.sample(rng);
            x = a * x + innov * e;
        }
        out
    };

    let irradiance: Vec<f64> = ar(&mut rng)
        .into_iter()
        .map(|c| (1.0 + params.volatility * c).max(0.0))
        .collect();
    let common = ar(&mut rng);
    let (wc, wi) = (params.common_share.sqrt(), (1.0 - params.common_share).sqrt());

    let mut p = DMatrix::zeros(t_len, n);
    let mut q = DMatrix::zeros(t_len, n);
    for k in 0..n {
        let base = params.base_load * spread.sample(&mut rng);
        let pf = tan_phi.sample(&mut rng);
        let solar = if rand::Rng::random::<f64>(&mut rng) < params.solar_fraction {
            params.base_load * spread.sample(&mut rng)
        } else {
            0.0
        };
        let fluct = ar(&mut rng);
        for t in 0..t_len {
            let f = wc * common[t] + wi * fluct[t];
            let load = base * (1.0 + params.volatility * f).max(0.0);
            p[(t, k)] = -load + solar * irradiance[t];
            q[(t, k)] = -load * pf;
        }
    }
    InjectionProfile::new(p, q, params.v0)
}
