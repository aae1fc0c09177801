//! Topology and interaction reports from estimated kernels, linear
//! baselines, and ROC/AUC scoring against ground truth.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::IdentifyError;
use crate::features::{pair_from_index, pair_count, VolterraKernels};
use crate::grid::{BusId, RadialGrid, Triad};
use crate::powerflow::VoltageSeries;
use crate::solver::{solve_all, SolveOutput, SolverConfig, SweepConfig};

/// Symmetric nonnegative scores over pairs of non-root buses; entry
/// `(i, j)` refers to buses `i + 1` and `j + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScores(DMatrix<f64>);

impl EdgeScores {
    /// Symmetrizes with the elementwise max of `|m|` and `|mᵀ|` and clears
    /// the diagonal.
    pub fn from_directed(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        Self(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                m[(i, j)].abs().max(m[(j, i)].abs())
            }
        }))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Score between 1-based buses.
    pub fn get(&self, a: BusId, b: BusId) -> f64 {
        self.0[(a - 1, b - 1)]
    }

    /// `(i, j, score)` for `i < j`, 1-based.
    pub fn pairs(&self) -> Vec<(BusId, BusId, f64)> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push((i + 1, j + 1, self.0[(i, j)]));
            }
        }
        out
    }
}

/// Edge scores from first-order kernels: `max(|ρ_j^(i)|, |ρ_i^(j)|)`.
pub fn edge_scores_from_kernels(kernels: &VolterraKernels) -> EdgeScores {
    EdgeScores::from_directed(&kernels.r1())
}

/// Nonzero second-order magnitudes keyed by triad (1-based ids).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriadScores(pub BTreeMap<Triad, f64>);

pub fn triad_scores_from_kernels(kernels: &VolterraKernels) -> TriadScores {
    let n = kernels.n();
    let mut out = BTreeMap::new();
    for (center, k) in kernels.buses.iter().enumerate() {
        for p in 0..pair_count(n) {
            let w = k.rho2[p];
            if w == 0.0 {
                continue;
            }
            let (i, j) = pair_from_index(n, p);
            if i == j || i == center || j == center {
                continue;
            }
            out.insert(Triad::new(center + 1, i + 1, j + 1), w.abs());
        }
    }
    TriadScores(out)
}

impl TriadScores {
    /// Ranked list, strongest first.
    pub fn ranked(&self) -> Vec<(Triad, f64)> {
        let mut v: Vec<_> = self.0.iter().map(|(t, s)| (*t, *s)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ordered by decreasing threshold, from `(0,0)` to `(1,1)`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Empirical ROC over labeled scores. Every distinct score is a threshold
/// (predict positive when `score ≥ threshold`) and `±∞` add the endpoints.
/// The area uses the trapezoid rule on integer counts, which makes it equal
/// to the Mann–Whitney statistic with ties counted one half.
pub fn roc_from_labels(samples: &[(f64, bool)]) -> Result<RocCurve, IdentifyError> {
    let pos = samples.iter().filter(|s| s.1).count() as u64;
    let neg = samples.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(IdentifyError::DegenerateTruth);
    }
    let mut sorted: Vec<(f64, bool)> = samples.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area, in units of 1/(pos·neg).
    let mut area2: u64 = 0;
    let mut k = 0;
    while k < sorted.len() {
        let thr = sorted[k].0;
        let (tp0, fp0) = (tp, fp);
        while k < sorted.len() && sorted[k].0 == thr {
            if sorted[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        area2 += (fp - fp0) * (tp + tp0);
        points.push(RocPoint {
            threshold: thr,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(RocCurve {
        points,
        auc: area2 as f64 / (2 * pos * neg) as f64,
    })
}

/// ROC of edge scores against a set of true edges among non-root buses
/// (1-based, root edges are ignored).
pub fn roc(scores: &EdgeScores, truth: &BTreeSet<(BusId, BusId)>) -> Result<RocCurve, IdentifyError> {
    let samples: Vec<(f64, bool)> = scores
        .pairs()
        .into_iter()
        .map(|(i, j, s)| (s, truth.contains(&(i, j))))
        .collect();
    roc_from_labels(&samples)
}

/// ROC of triad scores over every candidate `(center, {i, j})` of distinct
/// non-root buses; missing scores count as zero.
pub fn triad_roc(scores: &TriadScores, truth: &BTreeSet<Triad>, n: usize) -> Result<RocCurve, IdentifyError> {
    let mut samples = Vec::new();
    for c in 1..=n {
        for i in 1..=n {
            for j in i + 1..=n {
                if i == c || j == c {
                    continue;
                }
                let t = Triad::new(c, i, j);
                samples.push((scores.0.get(&t).copied().unwrap_or(0.0), truth.contains(&t)));
            }
        }
    }
    roc_from_labels(&samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineOptions {
    /// Add `δ·I`, `δ = 1e-8·tr/N`, when the covariance condition number
    /// exceeds `1e12`.
    pub ridge: bool,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self { ridge: true }
    }
}

const MAX_CONDITION: f64 = 1e12;

fn sample_covariance(values: &DMatrix<f64>) -> DMatrix<f64> {
    let (t_len, n) = values.shape();
    let mut centered = values.clone();
    for b in 0..n {
        let mean = centered.column(b).mean();
        centered.column_mut(b).add_scalar_mut(-mean);
    }
    let denom = (t_len.max(2) - 1) as f64;
    centered.transpose() * centered / denom
}

/// Inverse sample covariance of the series (the concentration matrix).
pub fn concentration_matrix(series: &VoltageSeries, opts: &BaselineOptions) -> Result<DMatrix<f64>, IdentifyError> {
    let mut cov = sample_covariance(series.values());
    let n = cov.nrows();
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let ill = !(min > 0.0) || max / min > MAX_CONDITION;
    if ill {
        if !opts.ridge {
            if !(min > max * n as f64 * f64::EPSILON) {
                return Err(IdentifyError::SingularCovariance);
            }
        } else {
            let delta = 1e-8 * cov.trace() / n as f64;
            if !(delta > 0.0) {
                return Err(IdentifyError::SingularCovariance);
            }
            for i in 0..n {
                cov[(i, i)] += delta;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    if !(eig.eigenvalues.min() > 0.0) {
        return Err(IdentifyError::SingularCovariance);
    }
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let k = &eig.eigenvectors * inv * eig.eigenvectors.transpose();
    Ok((&k + k.transpose()) * 0.5)
}

/// Partial-correlation magnitudes `|K_ij| / sqrt(K_ii K_jj)`.
pub fn baseline_linear_pc(series: &VoltageSeries, opts: &BaselineOptions) -> Result<EdgeScores, IdentifyError> {
    let k = concentration_matrix(series, opts)?;
    let n = k.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| k[(i, j)] / (k[(i, i)] * k[(j, j)]).sqrt());
    Ok(EdgeScores::from_directed(&m))
}

/// Concentration-matrix magnitudes `|K_ij|`.
pub fn baseline_concentration(series: &VoltageSeries, opts: &BaselineOptions) -> Result<EdgeScores, IdentifyError> {
    Ok(EdgeScores::from_directed(&concentration_matrix(series, opts)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Volterra,
    Pc,
    Concentration,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Volterra, Method::Pc, Method::Concentration];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Volterra => "volterra",
            Method::Pc => "pc",
            Method::Concentration => "concentration",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = IdentifyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "volterra" => Ok(Method::Volterra),
            "pc" => Ok(Method::Pc),
            "concentration" => Ok(Method::Concentration),
            other => Err(IdentifyError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateConfig {
    pub methods: Vec<Method>,
    pub solver: SolverConfig,
    pub sweep: Option<SweepConfig>,
    pub baseline: BaselineOptions,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            solver: SolverConfig::default(),
            sweep: Some(SweepConfig::default()),
            baseline: BaselineOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEdge {
    pub i: BusId,
    pub j: BusId,
    pub score: f64,
    pub truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub roc: RocCurve,
    pub edges: Vec<ScoredEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriad {
    pub center: BusId,
    pub i: BusId,
    pub j: BusId,
    pub score: f64,
    pub truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub buses: usize,
    pub samples: usize,
    pub methods: BTreeMap<String, MethodReport>,
    /// Triad ROC for the Volterra method (not one of the edge comparisons).
    pub triad_roc: Option<RocCurve>,
    pub triads: Vec<ScoredTriad>,
}

impl EvaluationReport {
    pub fn auc(&self, method: Method) -> Option<f64> {
        self.methods.get(method.name()).map(|m| m.roc.auc)
    }

    pub fn auc_table(&self) -> BTreeMap<String, f64> {
        self.methods.iter().map(|(k, v)| (k.clone(), v.roc.auc)).collect()
    }
}

fn method_report(scores: &EdgeScores, truth: &BTreeSet<(BusId, BusId)>) -> Result<MethodReport, IdentifyError> {
    Ok(MethodReport {
        roc: roc(scores, truth)?,
        edges: scores
            .pairs()
            .into_iter()
            .map(|(i, j, score)| ScoredEdge {
                i,
                j,
                score,
                truth: truth.contains(&(i, j)),
            })
            .collect(),
    })
}

/// Runs the requested methods on the same series and scores them against
/// the grid's non-root edges.
pub fn evaluate(
    grid: &RadialGrid,
    series: &VoltageSeries,
    cfg: &EvaluateConfig,
) -> Result<(EvaluationReport, Option<SolveOutput>), IdentifyError> {
    let n = grid.n();
    if series.buses() != n {
        return Err(IdentifyError::DimensionMismatch(format!(
            "grid has {n} buses, series has {}",
            series.buses()
        )));
    }
    let gt = grid.ground_truth();
    let truth = gt.non_root_edges();
    let mut methods = BTreeMap::new();
    let mut triad_roc_out = None;
    let mut triads = Vec::new();
    let mut fit = None;
    for &method in &cfg.methods {
        let scores = match method {
            Method::Volterra => {
                let out = solve_all(series, &cfg.solver, cfg.sweep.as_ref())?;
                let ts = triad_scores_from_kernels(&out.kernels);
                let ttruth = gt.non_root_triads();
                triad_roc_out = triad_roc(&ts, &ttruth, n).ok();
                triads = ts
                    .ranked()
                    .into_iter()
                    .map(|(t, score)| ScoredTriad {
                        center: t.center,
                        i: t.i,
                        j: t.j,
                        score,
                        truth: ttruth.contains(&t),
                    })
                    .collect();
                let s = edge_scores_from_kernels(&out.kernels);
                fit = Some(out);
                s
            }
            Method::Pc => baseline_linear_pc(series, &cfg.baseline)?,
            Method::Concentration => baseline_concentration(series, &cfg.baseline)?,
        };
        methods.insert(method.name().to_string(), method_report(&scores, &truth)?);
    }
    Ok((
        EvaluationReport {
            buses: n,
            samples: series.len(),
            methods,
            triad_roc: triad_roc_out,
            triads,
        },
        fit,
    ))
}
