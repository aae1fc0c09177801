//! Per-bus sparse graph Volterra regression.
//!
//! Each bus `n` is regressed on the first-order and pairwise features of the
//! other buses with an ℓ1 penalty and a row-group penalty: group `i` collects
//! the first-order coefficient of bus `i` and every pair coefficient that
//! contains `i`. Pair coefficients belong to two groups, so the solver works
//! on a latent copy of each pair column per group; the coefficient is the
//! sum of its copies and the groups become disjoint.
//!
//! Regressors are voltage deviations from a per-bus reference (the sample
//! mean of the fitting window) and products of those deviations. This spans
//! the same model as raw products plus an intercept, but keeps a pair term
//! from shifting the first-order coefficients of its buses, so `R⁽¹⁾` stays
//! the local linear sensitivity used for topology recovery.
//!
//! The solver is monotone FISTA with backtracking and restart on objective
//! increase.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::features::{assemble_stacked_values, pair_index, BusKernels, FeatureMatrix, StackedModel, VolterraKernels};
use crate::powerflow::VoltageSeries;

/// Identity of a design column, as bus positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coefficient {
    First(usize),
    Pair(usize, usize),
}

/// Features of voltage deviations `v − c` for a fixed reference `c`.
#[derive(Debug, Clone)]
pub struct Design {
    centers: DVector<f64>,
    features: FeatureMatrix,
}

impl Design {
    /// Uses the per-bus sample means of `series` as reference.
    pub fn new(series: &VoltageSeries) -> Result<Self, SolverError> {
        let centers = DVector::from_iterator(series.buses(), series.values().column_iter().map(|c| c.mean()));
        Self::with_centers(series, &centers)
    }

    pub fn with_centers(series: &VoltageSeries, centers: &DVector<f64>) -> Result<Self, SolverError> {
        if centers.len() != series.buses() {
            return Err(SolverError::DimensionMismatch(format!(
                "{} reference values for {} buses",
                centers.len(),
                series.buses()
            )));
        }
        let mut dev = series.values().clone();
        for (mut col, c) in dev.column_iter_mut().zip(centers.iter()) {
            col.add_scalar_mut(-c);
        }
        Ok(Self {
            centers: centers.clone(),
            features: FeatureMatrix::from_values(&dev)?,
        })
    }

    pub fn centers(&self) -> &DVector<f64> {
        &self.centers
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    /// `T × N` deviations.
    pub fn deviations(&self) -> DMatrix<f64> {
        let n = self.features.buses();
        self.features.matrix().rows(0, n).transpose()
    }
}

/// Centered least-squares problem for one bus after eliminating the
/// coefficients that must vanish (own bus, pairs containing the own bus,
/// squared terms).
///
/// Design columns are scaled to unit root-mean-square so the penalty treats
/// buses near the substation (small deviations) like buses at the feeder
/// ends. Solutions of this problem are in scaled units; use
/// [`BusProblem::to_original`] to get kernel coefficients.
#[derive(Debug, Clone)]
pub struct BusProblem {
    /// Position of the regressed bus.
    pub bus: usize,
    pub y: DVector<f64>,
    /// `T × d` centered, scaled design.
    pub a: DMatrix<f64>,
    pub colmap: Vec<Coefficient>,
    /// `groups[g]` lists the columns involving partner bus `group_bus[g]`.
    pub groups: Vec<Vec<usize>>,
    pub group_bus: Vec<usize>,
    pub y_mean: f64,
    pub col_means: DVector<f64>,
    /// Root-mean-square of each centered column (1 for constant columns).
    pub col_scales: DVector<f64>,
    buses: usize,
}

impl BusProblem {
    pub fn dim(&self) -> usize {
        self.colmap.len()
    }

    pub fn samples(&self) -> usize {
        self.y.len()
    }

    pub fn buses(&self) -> usize {
        self.buses
    }

    /// Builds the problem for bus position `bus` from the series and the
    /// deviation design computed from it.
    pub fn build(series: &VoltageSeries, design: &Design, bus: usize) -> Result<Self, SolverError> {
        let m = design.features();
        let n = series.buses();
        let t_len = series.len();
        if m.buses() != n || m.matrix().ncols() != t_len {
            return Err(SolverError::DimensionMismatch(format!(
                "series is {t_len}×{n}, features are {}×{} for {} buses",
                m.matrix().nrows(),
                m.matrix().ncols(),
                m.buses()
            )));
        }
        if bus >= n {
            return Err(SolverError::DimensionMismatch(format!("bus position {bus} ≥ {n}")));
        }

        let others: Vec<usize> = (0..n).filter(|&i| i != bus).collect();
        let mut colmap: Vec<Coefficient> = others.iter().map(|&i| Coefficient::First(i)).collect();
        for (a, &i) in others.iter().enumerate() {
            for &j in &others[a + 1..] {
                colmap.push(Coefficient::Pair(i, j));
            }
        }
        let group_of = |i: usize| if i < bus { i } else { i - 1 };
        let mut groups = vec![Vec::new(); others.len()];
        for (c, coef) in colmap.iter().enumerate() {
            match *coef {
                Coefficient::First(i) => groups[group_of(i)].push(c),
                Coefficient::Pair(i, j) => {
                    groups[group_of(i)].push(c);
                    groups[group_of(j)].push(c);
                }
            }
        }

        let d = colmap.len();
        let mut a = DMatrix::zeros(t_len, d);
        for (c, coef) in colmap.iter().enumerate() {
            let row = match *coef {
                Coefficient::First(i) => m.first_order_row(i),
                Coefficient::Pair(i, j) => m.pair_row(i, j),
            };
            a.column_mut(c).copy_from(&m.matrix().row(row).transpose());
        }
        let mut y = series.values().column(bus).into_owned();

        let y_mean = y.mean();
        y.add_scalar_mut(-y_mean);
        let col_means = DVector::from_iterator(d, a.column_iter().map(|c| c.mean()));
        for (c, mean) in col_means.iter().enumerate() {
            a.column_mut(c).add_scalar_mut(-mean);
        }
        let col_scales = DVector::from_iterator(
            d,
            a.column_iter().map(|c| {
                let rms = c.norm() / (t_len as f64).sqrt();
                if rms > 0.0 && rms.is_finite() { rms } else { 1.0 }
            }),
        );
        for (c, s) in col_scales.iter().enumerate() {
            a.column_mut(c).unscale_mut(*s);
        }

        Ok(Self {
            bus,
            y,
            a,
            colmap,
            groups,
            group_bus: others,
            y_mean,
            col_means,
            col_scales,
            buses: n,
        })
    }

    /// Maps a solution of the scaled problem to coefficients on the
    /// unscaled features.
    pub fn to_original(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta.component_div(&self.col_scales)
    }

    /// Un-centered prediction of the target from coefficients in original
    /// units. `design` must use the same reference as the one the problem
    /// was built from.
    pub fn predict(&self, design: &Design, theta: &DVector<f64>) -> DVector<f64> {
        let m = design.features();
        let t_len = m.matrix().ncols();
        let intercept = self.y_mean - self.col_means.dot(theta);
        DVector::from_fn(t_len, |t, _| {
            intercept
                + self
                    .colmap
                    .iter()
                    .zip(theta.iter())
                    .map(|(coef, w)| {
                        let row = match *coef {
                            Coefficient::First(i) => m.first_order_row(i),
                            Coefficient::Pair(i, j) => m.pair_row(i, j),
                        };
                        w * m.matrix()[(row, t)]
                    })
                    .sum::<f64>()
        })
    }

    /// Smallest `λ` (with `μ = 0`) for which the zero vector is optimal.
    pub fn lambda_max(&self) -> f64 {
        2.0 * (self.a.transpose() * &self.y).amax()
    }
}

pub fn build_problem(series: &VoltageSeries, design: &Design, bus: usize) -> Result<BusProblem, SolverError> {
    BusProblem::build(series, design, bus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StepPolicy {
    /// Constant step from a guaranteed Lipschitz bound.
    Fixed,
    #[default]
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// ℓ1 weight.
    pub lambda: f64,
    /// Row-group (ℓ2,1) weight.
    pub mu: f64,
    /// Relative objective change that triggers the optimality check.
    pub tol: f64,
    pub max_iter: usize,
    pub step: StepPolicy,
    /// Required optimality residual, relative to `1 + ‖∇f‖`.
    pub opt_tol: f64,
    /// Zero pair coefficients whose partners lack a first-order term.
    pub enforce_hierarchy: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            mu: 1e-4,
            tol: 1e-8,
            max_iter: 20_000,
            step: StepPolicy::Backtracking,
            opt_tol: 1e-6,
            enforce_hierarchy: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let ok = self.lambda >= 0.0
            && self.mu >= 0.0
            && self.lambda.is_finite()
            && self.mu.is_finite()
            && self.tol > 0.0
            && self.opt_tol > 0.0
            && self.max_iter >= 1;
        if ok {
            Ok(())
        } else {
            Err(SolverError::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusSolution {
    /// Coefficients in design-column order.
    pub theta: DVector<f64>,
    /// Latent (per-group) coefficients.
    pub latent: DVector<f64>,
    /// Objective value after every iteration.
    pub objective: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub optimality_residual: f64,
    pub gradient_norm: f64,
    /// Target or design vanished after centering.
    pub ill_conditioned: bool,
}

/// Latent layout: one copy of every column per group it belongs to, laid out
/// group by group.
#[derive(Debug, Clone)]
struct Latent {
    col: Vec<usize>,
    ranges: Vec<std::ops::Range<usize>>,
}

impl Latent {
    fn new(problem: &BusProblem) -> Self {
        let mut col = Vec::new();
        let mut ranges = Vec::with_capacity(problem.groups.len());
        for g in &problem.groups {
            let start = col.len();
            col.extend_from_slice(g);
            ranges.push(start..col.len());
        }
        Self { col, ranges }
    }

    fn len(&self) -> usize {
        self.col.len()
    }

    fn collapse(&self, x: &DVector<f64>, d: usize) -> DVector<f64> {
        let mut theta = DVector::zeros(d);
        for (k, &c) in self.col.iter().enumerate() {
            theta[c] += x[k];
        }
        theta
    }

    fn expand(&self, g: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.col.iter().map(|&c| g[c]))
    }
}

/// Least-squares loss and gradient evaluations in latent coordinates.
struct Smooth<'a> {
    problem: &'a BusProblem,
    latent: &'a Latent,
    resid: DVector<f64>,
    grad_col: DVector<f64>,
}

impl<'a> Smooth<'a> {
    fn new(problem: &'a BusProblem, latent: &'a Latent) -> Self {
        Self {
            problem,
            latent,
            resid: DVector::zeros(problem.samples()),
            grad_col: DVector::zeros(problem.dim()),
        }
    }

    fn value(&mut self, x: &DVector<f64>) -> f64 {
        let theta = self.latent.collapse(x, self.problem.dim());
        self.resid.copy_from(&self.problem.y);
        self.resid.gemv(1.0, &self.problem.a, &theta, -1.0);
        self.resid.norm_squared()
    }

    /// Loss and latent gradient at `x`.
    fn value_grad(&mut self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let f = self.value(x);
        self.grad_col.gemv_tr(2.0, &self.problem.a, &self.resid, 0.0);
        (f, self.latent.expand(&self.grad_col))
    }
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Proximal operator of `l1·‖x‖₁ + group·Σ_g ‖x_g‖₂` for disjoint groups:
/// elementwise soft-thresholding followed by block shrinkage.
pub fn prox_sparse_group(
    z: &DVector<f64>,
    l1: f64,
    group: f64,
    groups: &[std::ops::Range<usize>],
) -> DVector<f64> {
    let mut out = z.map(|v| soft(v, l1));
    for g in groups {
        let norm = out.rows(g.start, g.len()).norm();
        let scale = if norm > group { 1.0 - group / norm } else { 0.0 };
        out.rows_mut(g.start, g.len()).scale_mut(scale);
    }
    out
}

fn penalty(x: &DVector<f64>, lambda: f64, mu: f64, groups: &[std::ops::Range<usize>]) -> f64 {
    let l1 = if lambda > 0.0 { lambda * x.lp_norm(1) } else { 0.0 };
    let gl = if mu > 0.0 {
        mu * groups.iter().map(|g| x.rows(g.start, g.len()).norm()).sum::<f64>()
    } else {
        0.0
    };
    l1 + gl
}

/// Distance from `-grad` to the subdifferential of the penalty at `x`.
pub fn optimality_residual(
    x: &DVector<f64>,
    grad: &DVector<f64>,
    lambda: f64,
    mu: f64,
    groups: &[std::ops::Range<usize>],
) -> f64 {
    let mut total = 0.0;
    for g in groups {
        let xg = x.rows(g.start, g.len());
        let norm = xg.norm();
        if norm == 0.0 {
            let shrunk: f64 = g.clone().map(|k| soft(-grad[k], lambda).powi(2)).sum::<f64>().sqrt();
            total += (shrunk - mu).max(0.0).powi(2);
        } else {
            for k in g.clone() {
                let d = if x[k] != 0.0 {
                    -grad[k] - lambda * x[k].signum() - mu * x[k] / norm
                } else {
                    (grad[k].abs() - lambda).max(0.0)
                };
                total += d * d;
            }
        }
    }
    total.sqrt()
}

fn power_iteration(smooth: &mut Smooth, p: usize) -> f64 {
    let latent = smooth.latent;
    let problem = smooth.problem;
    let mut x = DVector::from_element(p, 1.0 / (p as f64).sqrt());
    let mut est = 0.0;
    let mut u = DVector::zeros(problem.samples());
    let mut w = DVector::zeros(problem.dim());
    for _ in 0..20 {
        let theta = latent.collapse(&x, problem.dim());
        u.gemv(1.0, &problem.a, &theta, 0.0);
        w.gemv_tr(2.0, &problem.a, &u, 0.0);
        let hx = latent.expand(&w);
        let norm = hx.norm();
        if norm == 0.0 {
            return 0.0;
        }
        est = norm;
        x = hx / norm;
    }
    est
}

// Infinity-norm bound on the latent Hessian 2PᵀAᵀAP.
fn lipschitz_bound(problem: &BusProblem, latent: &Latent) -> f64 {
    let g = problem.a.transpose() * &problem.a;
    let mut mult = vec![0.0; problem.dim()];
    for &c in &latent.col {
        mult[c] += 1.0;
    }
    let row_sums: Vec<f64> = (0..problem.dim())
        .map(|r| (0..problem.dim()).map(|c| g[(r, c)].abs() * mult[c]).sum())
        .collect();
    2.0 * row_sums.into_iter().fold(0.0, f64::max)
}

/// Solves one bus problem from a zero start.
pub fn solve_bus(problem: &BusProblem, cfg: &SolverConfig) -> Result<BusSolution, SolverError> {
    solve_bus_from(problem, cfg, None)
}

/// Solves one bus problem, optionally warm-started from latent coefficients.
pub fn solve_bus_from(
    problem: &BusProblem,
    cfg: &SolverConfig,
    warm: Option<&DVector<f64>>,
) -> Result<BusSolution, SolverError> {
    cfg.validate()?;
    let latent = Latent::new(problem);
    let p = latent.len();
    let d = problem.dim();
    if let Some(w) = warm {
        if w.len() != p {
            return Err(SolverError::DimensionMismatch(format!("warm start has {} entries, need {p}", w.len())));
        }
    }
    let (lambda, mu) = (cfg.lambda, cfg.mu);
    let ranges = &latent.ranges;

    let degenerate = problem.y.amax() == 0.0 || problem.a.amax() == 0.0 || p == 0;
    if degenerate {
        if p > 0 {
            warn!("bus {}: target or design is constant after centering", problem.bus + 1);
        }
        let x = DVector::zeros(p);
        let f = problem.y.norm_squared();
        return Ok(BusSolution {
            theta: DVector::zeros(d),
            latent: x,
            objective: vec![f],
            status: SolveStatus::Converged,
            iterations: 0,
            optimality_residual: 0.0,
            gradient_norm: 0.0,
            ill_conditioned: p > 0,
        });
    }

    let mut smooth = Smooth::new(problem, &latent);
    let mut lip = match cfg.step {
        StepPolicy::Backtracking => power_iteration(&mut smooth, p),
        StepPolicy::Fixed => lipschitz_bound(problem, &latent),
    };
    if !(lip > 0.0) {
        lip = 1.0;
    }

    let mut x = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
    let mut x_prev = x.clone();
    let mut f_x = smooth.value(&x);
    let mut obj_x = f_x + penalty(&x, lambda, mu, ranges);
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut trace = Vec::with_capacity(256);
    let mut status = SolveStatus::MaxIter;
    let mut residual = f64::INFINITY;
    let mut grad_norm = 0.0;
    let mut iterations = 0;

    for it in 1..=cfg.max_iter {
        iterations = it;
        let (f_y, g_y) = smooth.value_grad(&yk);
        let (z, f_z) = loop {
            let step = 1.0 / lip;
            let z = prox_sparse_group(&(&yk - &g_y * step), lambda * step, mu * step, ranges);
            let f_z = smooth.value(&z);
            if cfg.step == StepPolicy::Fixed {
                break (z, f_z);
            }
            let diff = &z - &yk;
            let model = f_y + g_y.dot(&diff) + 0.5 * lip * diff.norm_squared();
            if f_z <= model + 1e-14 * f_y.abs().max(1e-300) || lip > 1e300 {
                break (z, f_z);
            }
            lip *= 2.0;
        };
        let obj_z = f_z + penalty(&z, lambda, mu, ranges);

        // Monotone FISTA: keep the better of z and x, but let the momentum
        // follow z. Restart when the objective rises beyond rounding or the
        // momentum points against the prox-gradient step.
        let prev_obj = obj_x;
        let accept = obj_z <= obj_x;
        let uphill = (&yk - &z).dot(&(&z - &x)) > 0.0;
        let restart = obj_z > obj_x + 1e-12 * obj_x.abs() || uphill;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        x_prev.copy_from(&x);
        if accept {
            x.copy_from(&z);
            f_x = f_z;
            obj_x = obj_z;
        }
        if restart {
            yk.copy_from(&x);
            t = 1.0;
        } else {
            yk = &x + (&z - &x) * (t / t_next) + (&x - &x_prev) * ((t - 1.0) / t_next);
            t = t_next;
        }
        trace.push(obj_x);

        let rel = (prev_obj - obj_x).abs() / obj_x.abs().max(f64::MIN_POSITIVE);
        if (accept && rel <= cfg.tol) || it % 50 == 0 || it == cfg.max_iter {
            let (_, g_x) = smooth.value_grad(&x);
            grad_norm = g_x.norm();
            residual = optimality_residual(&x, &g_x, lambda, mu, ranges);
            if residual <= cfg.opt_tol * (1.0 + grad_norm) {
                status = SolveStatus::Converged;
                break;
            }
        }
    }
    let _ = f_x;

    Ok(BusSolution {
        theta: latent.collapse(&x, d),
        latent: x,
        objective: trace,
        status,
        iterations,
        optimality_residual: residual,
        gradient_norm: grad_norm,
        ill_conditioned: false,
    })
}

/// Latent group ranges of a problem (for use with [`prox_sparse_group`] and
/// [`optimality_residual`]).
pub fn latent_groups(problem: &BusProblem) -> Vec<std::ops::Range<usize>> {
    Latent::new(problem).ranges
}

/// Sum of latent copies, per design column.
pub fn collapse_latent(problem: &BusProblem, x: &DVector<f64>) -> DVector<f64> {
    Latent::new(problem).collapse(x, problem.dim())
}

/// Objective `‖y − Aθ‖² + λ‖x‖₁ + μ Σ_g ‖x_g‖` at latent `x`.
pub fn objective(problem: &BusProblem, x: &DVector<f64>, lambda: f64, mu: f64) -> f64 {
    let latent = Latent::new(problem);
    let mut smooth = Smooth::new(problem, &latent);
    smooth.value(x) + penalty(x, lambda, mu, &latent.ranges)
}

/// Optimality residual and gradient norm at latent `x`, recomputed from the
/// problem data. A solution is certified when the residual is at most
/// `opt_tol · (1 + gradient norm)`.
pub fn certificate(problem: &BusProblem, x: &DVector<f64>, lambda: f64, mu: f64) -> (f64, f64) {
    let latent = Latent::new(problem);
    let theta = latent.collapse(x, problem.dim());
    let resid = &problem.a * theta - &problem.y;
    let grad = latent.expand(&(problem.a.transpose() * resid * 2.0));
    (optimality_residual(x, &grad, lambda, mu, &latent.ranges), grad.norm())
}

/// Geometric regularization grid with holdout-time validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// `λ / λ_max` candidates.
    pub lambda_ratios: Vec<f64>,
    /// `μ / λ` candidates.
    pub mu_ratios: Vec<f64>,
    /// Trailing fraction of the series held out for validation.
    pub holdout: f64,
    /// Iteration cap for the screening solves along the path; the final
    /// refit uses the solver configuration unchanged.
    pub path_max_iter: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambda_ratios: geometric(1.0, 1e-5, 11),
            mu_ratios: vec![0.1, 1.0],
            holdout: 0.2,
            path_max_iter: 2000,
        }
    }
}

/// `count` points from `hi` down to `lo`, geometrically spaced.
pub fn geometric(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![hi];
    }
    let step = (lo / hi).ln() / (count - 1) as f64;
    (0..count).map(|k| hi * (step * k as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusDiagnostics {
    /// 1-based bus id.
    pub bus: usize,
    pub lambda: f64,
    pub mu: f64,
    /// Selected `λ/λ_max` and `μ/λ` when swept.
    pub ratios: Option<(f64, f64)>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub optimality_residual: f64,
    pub objective: Vec<f64>,
    pub intercept: f64,
    pub ill_conditioned: bool,
    pub pairs_cleared: usize,
    /// Holdout mean squared error of the selected setting, when swept.
    pub holdout_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    /// Kernels acting on deviations from `centers`.
    pub kernels: VolterraKernels,
    /// Reference voltage per bus.
    pub centers: DVector<f64>,
    /// Stacked model over the deviations; `e` carries the per-bus intercepts.
    pub stacked: StackedModel,
    pub diagnostics: Vec<BusDiagnostics>,
}

fn holdout_split(t_len: usize, holdout: f64) -> Result<usize, SolverError> {
    let test = ((t_len as f64) * holdout).round() as usize;
    if !(0.0..1.0).contains(&holdout) || test == 0 || t_len - test < 2 {
        return Err(SolverError::InvalidConfig(format!(
            "holdout fraction {holdout} leaves no usable split of {t_len} samples"
        )));
    }
    Ok(t_len - test)
}

/// Picks `(λ/λ_max, μ/λ)` for one bus by validation on the trailing samples.
fn sweep_bus(
    train: &VoltageSeries,
    train_d: &Design,
    test: &VoltageSeries,
    test_d: &Design,
    bus: usize,
    base: &SolverConfig,
    sweep: &SweepConfig,
) -> Result<(f64, f64, f64), SolverError> {
    let problem = BusProblem::build(train, train_d, bus)?;
    let lmax = problem.lambda_max();
    let truth = test.values().column(bus);
    let mut best: Option<(f64, f64, f64)> = None;
    for &mr in &sweep.mu_ratios {
        let mut warm: Option<DVector<f64>> = None;
        for &lr in &sweep.lambda_ratios {
            let cfg = SolverConfig {
                lambda: lr * lmax,
                mu: mr * lr * lmax,
                max_iter: sweep.path_max_iter.min(base.max_iter),
                ..*base
            };
            let sol = solve_bus_from(&problem, &cfg, warm.as_ref())?;
            let pred = problem.predict(test_d, &problem.to_original(&sol.theta));
            let mse = (pred - truth).norm_squared() / truth.len() as f64;
            // Strict improvement keeps the sparser (earlier) candidate on ties.
            if best.is_none_or(|(m, _, _)| mse < m * (1.0 - 1e-9)) {
                best = Some((mse, lr, mr));
            }
            warm = Some(sol.latent);
        }
    }
    Ok(best.expect("non-empty sweep grid"))
}

/// Shared state for fitting buses of one series: the full-series design
/// and, when sweeping, the train/holdout split.
pub struct BusFitter<'a> {
    series: &'a VoltageSeries,
    cfg: SolverConfig,
    design: Design,
    split: Option<(&'a SweepConfig, VoltageSeries, Design, VoltageSeries, Design)>,
}

impl<'a> BusFitter<'a> {
    pub fn new(series: &'a VoltageSeries, cfg: &SolverConfig, sweep: Option<&'a SweepConfig>) -> Result<Self, SolverError> {
        cfg.validate()?;
        let design = Design::new(series)?;
        let split = match sweep {
            Some(s) => {
                if s.lambda_ratios.is_empty() || s.mu_ratios.is_empty() {
                    return Err(SolverError::InvalidConfig("empty sweep grid".into()));
                }
                let at = holdout_split(series.len(), s.holdout)?;
                let train = series.slice(0..at).map_err(|e| SolverError::InvalidConfig(e.to_string()))?;
                let test = series
                    .slice(at..series.len())
                    .map_err(|e| SolverError::InvalidConfig(e.to_string()))?;
                let train_d = Design::new(&train)?;
                let test_d = Design::with_centers(&test, train_d.centers())?;
                Some((s, train, train_d, test, test_d))
            }
            None => None,
        };
        Ok(Self {
            series,
            cfg: *cfg,
            design,
            split,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    /// Fits bus position `bus`. With a sweep, `(λ, μ)` are selected on the
    /// holdout and the bus is refit on the full series with the same ratios
    /// to `λ_max`.
    pub fn fit(&self, bus: usize) -> Result<(BusKernels, BusDiagnostics), SolverError> {
        let at = |e| SolverError::AtBus {
            bus: bus + 1,
            source: Box::new(e),
        };
        let cfg = &self.cfg;
        let n = self.series.buses();
        let problem = BusProblem::build(self.series, &self.design, bus).map_err(at)?;
        let (bus_cfg, holdout_mse, ratios) = match &self.split {
            Some((s, train, train_d, test, test_d)) => {
                let (mse, lr, mr) = sweep_bus(train, train_d, test, test_d, bus, cfg, s).map_err(at)?;
                let lmax = problem.lambda_max();
                (
                    SolverConfig {
                        lambda: lr * lmax,
                        mu: mr * lr * lmax,
                        ..*cfg
                    },
                    Some(mse),
                    Some((lr, mr)),
                )
            }
            None => (*cfg, None, None),
        };
        let sol = solve_bus(&problem, &bus_cfg).map_err(at)?;

        let mut k = BusKernels::zeros(n);
        for (coef, &w) in problem.colmap.iter().zip(problem.to_original(&sol.theta).iter()) {
            match *coef {
                Coefficient::First(i) => k.rho1[i] = w,
                Coefficient::Pair(i, j) => k.rho2[pair_index(n, i, j)] = w,
            }
        }
        let pairs_cleared = if cfg.enforce_hierarchy { k.enforce_hierarchy() } else { 0 };
        if sol.status == SolveStatus::MaxIter {
            warn!(
                "bus {}: stopped at max_iter with optimality residual {:e}",
                bus + 1,
                sol.optimality_residual
            );
        }
        let theta = DVector::from_iterator(
            problem.dim(),
            problem.colmap.iter().map(|coef| match *coef {
                Coefficient::First(i) => k.rho1[i],
                Coefficient::Pair(i, j) => k.pair(i, j),
            }),
        );
        let diag = BusDiagnostics {
            bus: bus + 1,
            lambda: bus_cfg.lambda,
            mu: bus_cfg.mu,
            ratios,
            status: sol.status,
            iterations: sol.iterations,
            optimality_residual: sol.optimality_residual,
            objective: sol.objective,
            intercept: problem.y_mean - problem.col_means.dot(&theta),
            ill_conditioned: sol.ill_conditioned,
            pairs_cleared,
            holdout_mse,
        };
        Ok((k, diag))
    }
}

/// Fits every bus independently and assembles the stacked model.
///
/// With `sweep`, each bus selects its own `(λ, μ)` on the trailing holdout;
/// otherwise `cfg.lambda` and `cfg.mu` are used as given.
pub fn solve_all(
    series: &VoltageSeries,
    cfg: &SolverConfig,
    sweep: Option<&SweepConfig>,
) -> Result<SolveOutput, SolverError> {
    let fitter = BusFitter::new(series, cfg, sweep)?;
    let n = series.buses();
    let per_bus: Vec<_> = (0..n)
        .into_par_iter()
        .map(|bus| fitter.fit(bus))
        .collect::<Result<_, _>>()?;
    let mut kernels = VolterraKernels::zeros(n);
    let mut diagnostics = Vec::with_capacity(n);
    for (bus, (k, d)) in per_bus.into_iter().enumerate() {
        kernels.buses[bus] = k;
        diagnostics.push(d);
    }
    let stacked = assemble_stacked_values(&fitter.design().deviations(), &kernels)?;
    Ok(SolveOutput {
        kernels,
        centers: fitter.design().centers().clone(),
        stacked,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(t_len: usize, n: usize, seed: u64) -> VoltageSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VoltageSeries::from_matrix(DMatrix::from_fn(t_len, n, |_, _| rng.random_range(0.5..1.5))).unwrap()
    }

    fn problem_for(series: &VoltageSeries, bus: usize) -> BusProblem {
        let design = Design::new(series).unwrap();
        build_problem(series, &design, bus).unwrap()
    }

    #[test]
    fn three_bus_elimination() {
        let s = random_series(10, 3, 1);
        let p = problem_for(&s, 0);
        assert_eq!(
            p.colmap,
            vec![Coefficient::First(1), Coefficient::First(2), Coefficient::Pair(1, 2)]
        );
        assert_eq!(p.groups, vec![vec![0, 2], vec![1, 2]]);
        assert_eq!(p.group_bus, vec![1, 2]);
        assert!(p.y.mean().abs() < 1e-15);
        for c in p.a.column_iter() {
            assert!(c.mean().abs() < 1e-15);
        }
    }

    #[test]
    fn two_bus_single_column() {
        let s = random_series(10, 2, 2);
        let p = problem_for(&s, 0);
        assert_eq!(p.colmap, vec![Coefficient::First(1)]);
        assert_eq!(p.groups, vec![vec![0]]);
    }

    #[test]
    fn prox_examples() {
        let one = vec![0..1];
        let z = DVector::from_vec(vec![3.0]);
        assert_eq!(prox_sparse_group(&z, 1.0, 0.0, &one)[0], 2.0);
        let g = vec![0..2];
        let z = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(prox_sparse_group(&z, 0.0, 5.0, &g).as_slice(), &[0.0, 0.0]);
        let out = prox_sparse_group(&z, 0.0, 2.5, &g);
        assert!((out[0] - 1.5).abs() < 1e-15 && (out[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn prox_matches_grid_search_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = vec![0..2];
        for _ in 0..20 {
            let z = DVector::from_vec(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            let (l1, gr) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.5));
            let obj = |a: f64, b: f64| {
                0.5 * ((a - z[0]).powi(2) + (b - z[1]).powi(2)) + l1 * (a.abs() + b.abs()) + gr * (a * a + b * b).sqrt()
            };
            let p = prox_sparse_group(&z, l1, gr, &g);
            let best = obj(p[0], p[1]);
            let h = 0.005;
            for ia in -700..=700 {
                for ib in (-700..=700).step_by(7) {
                    let (a, b) = (ia as f64 * h, ib as f64 * h);
                    assert!(obj(a, b) >= best - 1e-12);
                }
            }
        }
    }

    #[test]
    fn unregularized_matches_normal_equations() {
        let s = random_series(120, 5, 4);
        let p = problem_for(&s, 2);
        let cfg = SolverConfig {
            lambda: 0.0,
            mu: 0.0,
            tol: 1e-16,
            opt_tol: 1e-13,
            max_iter: 200_000,
            ..Default::default()
        };
        let sol = solve_bus(&p, &cfg).unwrap();
        let ata = p.a.transpose() * &p.a;
        let aty = p.a.transpose() * &p.y;
        let oracle = ata.cholesky().unwrap().solve(&aty);
        assert!((&sol.theta - &oracle).amax() < 1e-8, "status {:?} res {} gn {} err {}", sol.status, sol.optimality_residual, sol.gradient_norm, (&sol.theta - &oracle).amax());
    }

    #[test]
    fn lambda_max_gives_zero() {
        let s = random_series(60, 5, 5);
        let p = problem_for(&s, 1);
        let cfg = SolverConfig {
            lambda: p.lambda_max() * 1.0001,
            mu: 0.0,
            ..Default::default()
        };
        let sol = solve_bus(&p, &cfg).unwrap();
        assert!(sol.theta.iter().all(|&x| x == 0.0));
        assert_eq!(sol.status, SolveStatus::Converged);
    }

    #[test]
    fn monotone_trace_and_certificate() {
        let s = random_series(80, 6, 6);
        let p = problem_for(&s, 3);
        let cfg = SolverConfig {
            lambda: 0.05 * p.lambda_max(),
            mu: 0.05 * p.lambda_max(),
            ..Default::default()
        };
        let sol = solve_bus(&p, &cfg).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        for w in sol.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(sol.optimality_residual <= 1e-6 * (1.0 + sol.gradient_norm));

        let fixed = SolverConfig {
            step: StepPolicy::Fixed,
            ..cfg
        };
        let sol_f = solve_bus(&p, &fixed).unwrap();
        assert_eq!(sol_f.status, SolveStatus::Converged);
        assert!((&sol_f.theta - &sol.theta).amax() < 1e-4);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let s = VoltageSeries::from_matrix(DMatrix::from_element(20, 4, 1.0)).unwrap();
        let p = problem_for(&s, 0);
        let sol = solve_bus(&p, &SolverConfig::default()).unwrap();
        assert!(sol.ill_conditioned);
        assert!(sol.theta.iter().all(|&x| x == 0.0));
        let out = solve_all(&s, &SolverConfig::default(), None).unwrap();
        assert!(out.diagnostics.iter().all(|d| d.ill_conditioned));
        assert!(out.kernels.r1().amax() == 0.0 && out.kernels.r2().amax() == 0.0);
    }

    #[test]
    fn shrinking_path_never_grows_penalty() {
        let s = random_series(100, 6, 7);
        let p = problem_for(&s, 0);
        let groups = latent_groups(&p);
        let base = 0.01 * p.lambda_max();
        let (mut last_pen, mut last_l1) = (f64::INFINITY, f64::INFINITY);
        for k in 0..5 {
            let scale = 2f64.powi(k);
            let cfg = SolverConfig {
                lambda: base * scale,
                mu: base * scale,
                tol: 1e-12,
                opt_tol: 1e-9,
                max_iter: 100_000,
                ..Default::default()
            };
            let sol = solve_bus(&p, &cfg).unwrap();
            let pen = penalty(&sol.latent, 1.0, 1.0, &groups);
            let l1 = sol.theta.lp_norm(1);
            assert!(pen <= last_pen + 1e-9);
            assert!(l1 <= last_l1 + 1e-9);
            last_pen = pen;
            last_l1 = l1;
        }
    }

    #[test]
    fn warm_start_dimension_checked() {
        let s = random_series(20, 4, 8);
        let p = problem_for(&s, 0);
        let bad = DVector::zeros(1);
        assert!(solve_bus_from(&p, &SolverConfig::default(), Some(&bad)).is_err());
    }
}
