//! Second-order graph Volterra feature maps.
//!
//! Buses are addressed by position `k = bus − 1` throughout this module.
//! Pair coefficients are stored once for `i ≤ j` in lexicographic order;
//! every accessor taking a pair accepts either argument order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::FeatureError;
use crate::powerflow::VoltageSeries;

/// Number of unordered pairs with repetition, `N(N+1)/2`.
pub fn pair_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Flat lexicographic position of the pair `{i, j}` among `n` buses.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    debug_assert!(b < n);
    a * (2 * n - a + 1) / 2 + (b - a)
}

/// Inverse of [`pair_index`].
pub fn pair_from_index(n: usize, mut k: usize) -> (usize, usize) {
    for a in 0..n {
        let row = n - a;
        if k < row {
            return (a, a + k);
        }
        k -= row;
    }
    panic!("pair index out of range for n={n}");
}

/// Feature dimension `N + N(N+1)/2`.
pub fn feature_dim(n: usize) -> usize {
    n + pair_count(n)
}

/// `v ⊠ v`: all products `v_i v_j` with `i ≤ j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedKron {
    n: usize,
    values: Vec<f64>,
}

impl ReducedKron {
    pub fn new(v: &[f64]) -> Self {
        let n = v.len();
        let mut values = Vec::with_capacity(pair_count(n));
        for i in 0..n {
            for j in i..n {
                values.push(v[i] * v[j]);
            }
        }
        Self { n, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[pair_index(self.n, i, j)]
    }
}

pub fn reduced_kron(v: &[f64]) -> ReducedKron {
    ReducedKron::new(v)
}

/// `M = [m(1) … m(T)]` with `m(t) = [v(t); v(t) ⊠ v(t)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    m: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn from_series(series: &VoltageSeries) -> Result<Self, FeatureError> {
        Self::from_values(series.values())
    }

    /// Builds from a raw `T × N` matrix.
    pub fn from_values(values: &DMatrix<f64>) -> Result<Self, FeatureError> {
        let (t_len, n) = values.shape();
        if t_len == 0 || n == 0 {
            return Err(FeatureError::Empty);
        }
        let mut m = DMatrix::zeros(feature_dim(n), t_len);
        for t in 0..t_len {
            for i in 0..n {
                let x = values[(t, i)];
                if !x.is_finite() {
                    return Err(FeatureError::NonFiniteInput { t, bus: i + 1 });
                }
                m[(i, t)] = x;
            }
            let mut k = n;
            for i in 0..n {
                for j in i..n {
                    m[(k, t)] = values[(t, i)] * values[(t, j)];
                    k += 1;
                }
            }
        }
        Ok(Self { n, m })
    }

    pub fn buses(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Row of `M` holding `v_i`.
    pub fn first_order_row(&self, i: usize) -> usize {
        i
    }

    /// Row of `M` holding `v_i v_j`.
    pub fn pair_row(&self, i: usize, j: usize) -> usize {
        self.n + pair_index(self.n, i, j)
    }
}

pub fn build_feature_matrix(series: &VoltageSeries) -> Result<FeatureMatrix, FeatureError> {
    FeatureMatrix::from_series(series)
}

/// Kernels `θ_n = [ρ_{n,1}; ρ_{n,2}]` of one bus.
#[derive(Debug, Clone, PartialEq)]
pub struct BusKernels {
    pub rho1: DVector<f64>,
    pub rho2: DVector<f64>,
}

impl BusKernels {
    pub fn zeros(n: usize) -> Self {
        Self {
            rho1: DVector::zeros(n),
            rho2: DVector::zeros(pair_count(n)),
        }
    }

    pub fn buses(&self) -> usize {
        self.rho1.len()
    }

    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.rho2[pair_index(self.buses(), i, j)]
    }

    pub fn set_pair(&mut self, i: usize, j: usize, value: f64) {
        let k = pair_index(self.buses(), i, j);
        self.rho2[k] = value;
    }

    /// `θ_n` as one vector.
    pub fn theta(&self) -> DVector<f64> {
        let mut out = DVector::zeros(feature_dim(self.buses()));
        out.rows_mut(0, self.buses()).copy_from(&self.rho1);
        out.rows_mut(self.buses(), self.rho2.len()).copy_from(&self.rho2);
        out
    }

    /// Hollowness at `own` and no pair containing `own` or repeating a bus.
    pub fn satisfies_structure(&self, own: usize) -> bool {
        let n = self.buses();
        if self.rho1[own] != 0.0 {
            return false;
        }
        (0..pair_count(n)).all(|k| {
            let (i, j) = pair_from_index(n, k);
            self.rho2[k] == 0.0 || (i != j && i != own && j != own)
        })
    }

    /// A zero first-order coefficient forces every pair containing that bus
    /// to zero.
    pub fn satisfies_hierarchy(&self) -> bool {
        let n = self.buses();
        (0..pair_count(n)).all(|k| {
            let (i, j) = pair_from_index(n, k);
            self.rho2[k] == 0.0 || (self.rho1[i] != 0.0 && self.rho1[j] != 0.0)
        })
    }

    /// Zeroes every pair that has a partner with zero first-order coefficient.
    pub fn enforce_hierarchy(&mut self) -> usize {
        let n = self.buses();
        let mut cleared = 0;
        for k in 0..pair_count(n) {
            let (i, j) = pair_from_index(n, k);
            if self.rho2[k] != 0.0 && (self.rho1[i] == 0.0 || self.rho1[j] == 0.0) {
                self.rho2[k] = 0.0;
                cleared += 1;
            }
        }
        cleared
    }

    /// The `N × (N+1)` matrix whose row `i` is `[ρ_i, ρ_{i,1}, …, ρ_{i,N}]`.
    pub fn to_rn(&self) -> RnMatrix {
        let n = self.buses();
        let mut m = DMatrix::zeros(n, n + 1);
        for i in 0..n {
            m[(i, 0)] = self.rho1[i];
            for j in 0..n {
                m[(i, j + 1)] = self.pair(i, j);
            }
        }
        RnMatrix(m)
    }
}

/// Row-structured view of one bus's kernels; row `i` collects every
/// coefficient involving bus `i`, so each pair appears in two rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RnMatrix(pub DMatrix<f64>);

impl RnMatrix {
    pub fn to_kernels(&self) -> BusKernels {
        let n = self.0.nrows();
        let mut k = BusKernels::zeros(n);
        for i in 0..n {
            k.rho1[i] = self.0[(i, 0)];
            for j in i..n {
                k.set_pair(i, j, self.0[(i, j + 1)]);
            }
        }
        k
    }

    /// Euclidean norms of the rows (the ℓ2,1 terms of `R_nᵀ`).
    pub fn row_norms(&self) -> Vec<f64> {
        self.0.row_iter().map(|r| r.norm()).collect()
    }
}

pub fn kernels_to_rn(kernels: &BusKernels) -> RnMatrix {
    kernels.to_rn()
}

/// Kernels of every bus.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraKernels {
    pub buses: Vec<BusKernels>,
}

impl VolterraKernels {
    pub fn zeros(n: usize) -> Self {
        Self {
            buses: vec![BusKernels::zeros(n); n],
        }
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    /// `R⁽¹⁾`: row `n` is `ρ_{n,1}ᵀ`.
    pub fn r1(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |r, c| self.buses[r].rho1[c])
    }

    /// `R⁽²⁾`: row `n` is `ρ_{n,2}ᵀ`.
    pub fn r2(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, pair_count(n), |r, c| self.buses[r].rho2[c])
    }

    pub fn satisfies_structure(&self) -> bool {
        self.buses
            .iter()
            .enumerate()
            .all(|(own, k)| k.satisfies_structure(own))
    }

    pub fn satisfies_hierarchy(&self) -> bool {
        self.buses.iter().all(BusKernels::satisfies_hierarchy)
    }

    pub fn to_records(&self) -> Vec<KernelRecord> {
        let n = self.n();
        self.buses
            .iter()
            .enumerate()
            .map(|(own, k)| KernelRecord {
                n: own + 1,
                rho1: k.rho1.iter().copied().collect(),
                rho2: (0..pair_count(n))
                    .filter(|&p| k.rho2[p] != 0.0)
                    .map(|p| {
                        let (i, j) = pair_from_index(n, p);
                        PairRecord {
                            i: i + 1,
                            j: j + 1,
                            value: k.rho2[p],
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn from_records(records: &[KernelRecord]) -> Result<Self, FeatureError> {
        let n = records.len();
        let mut out = Self::zeros(n);
        for rec in records {
            if rec.n == 0 || rec.n > n || rec.rho1.len() != n {
                return Err(FeatureError::DimensionMismatch(format!(
                    "kernel record for bus {} does not fit {n} buses",
                    rec.n
                )));
            }
            let k = &mut out.buses[rec.n - 1];
            k.rho1 = DVector::from_column_slice(&rec.rho1);
            for p in &rec.rho2 {
                if p.i == 0 || p.j == 0 || p.i > n || p.j > n {
                    return Err(FeatureError::DimensionMismatch(format!(
                        "pair ({}, {}) out of range",
                        p.i, p.j
                    )));
                }
                k.set_pair(p.i - 1, p.j - 1, p.value);
            }
        }
        Ok(out)
    }
}

/// JSON export of one bus's kernels; bus ids are 1-based and only nonzero
/// pairs are listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub n: usize,
    pub rho1: Vec<f64>,
    pub rho2: Vec<PairRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// `V⁽¹⁾ = R⁽¹⁾V⁽¹⁾ + R⁽²⁾V⁽²⁾ + E`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedModel {
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

pub fn assemble_stacked(
    series: &VoltageSeries,
    kernels: &VolterraKernels,
) -> Result<StackedModel, FeatureError> {
    assemble_stacked_values(series.values(), kernels)
}

/// Same as [`assemble_stacked`] for an arbitrary `T × N` matrix, e.g. voltage
/// deviations.
pub fn assemble_stacked_values(
    values: &DMatrix<f64>,
    kernels: &VolterraKernels,
) -> Result<StackedModel, FeatureError> {
    let n = values.ncols();
    if kernels.n() != n || kernels.buses.iter().any(|k| k.buses() != n) {
        return Err(FeatureError::DimensionMismatch(format!(
            "series has {n} buses, kernels have {}",
            kernels.n()
        )));
    }
    let m = FeatureMatrix::from_values(values)?;
    let v1 = m.matrix().rows(0, n).into_owned();
    let v2 = m.matrix().rows(n, pair_count(n)).into_owned();
    let r1 = kernels.r1();
    let r2 = kernels.r2();
    let e = &v1 - &r1 * &v1 - &r2 * &v2;
    Ok(StackedModel { v1, v2, r1, r2, e })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_small() {
        assert_eq!(reduced_kron(&[1.0, 2.0]).values(), &[1.0, 2.0, 4.0]);
        assert_eq!(
            reduced_kron(&[1.0, 0.0, 3.0]).values(),
            &[1.0, 0.0, 3.0, 0.0, 0.0, 9.0]
        );
    }

    #[test]
    fn kron_matches_full_kronecker() {
        let v = [0.9, 1.1, 1.03, 0.97, 1.2, 0.5];
        let n = v.len();
        let full: Vec<f64> = (0..n * n).map(|k| v[k / n] * v[k % n]).collect();
        let expected: Vec<f64> = (0..n * n)
            .filter(|k| k / n <= k % n)
            .map(|k| full[k])
            .collect();
        assert_eq!(reduced_kron(&v).values(), expected.as_slice());
    }

    #[test]
    fn index_map_is_bijective() {
        for n in 1..=12 {
            let mut seen = vec![false; pair_count(n)];
            for i in 0..n {
                for j in i..n {
                    let k = pair_index(n, i, j);
                    assert!(!seen[k]);
                    seen[k] = true;
                    assert_eq!(pair_from_index(n, k), (i, j));
                    assert_eq!(pair_index(n, j, i), k);
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn feature_matrix_small() {
        let s = VoltageSeries::from_matrix(DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        let m = build_feature_matrix(&s).unwrap();
        assert_eq!(m.matrix().as_slice(), &[1.0, 2.0, 1.0, 2.0, 4.0]);
        assert_eq!(feature_dim(41), 902);
    }

    #[test]
    fn non_finite_rejected() {
        let values = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, f64::NAN, 1.0]);
        assert_eq!(
            FeatureMatrix::from_values(&values),
            Err(FeatureError::NonFiniteInput { t: 1, bus: 1 })
        );
    }

    #[test]
    fn rn_layout_by_hand() {
        // Bus 1 (position 0) with ρ_2 = a, ρ_3 = b, ρ_{2,3} = c.
        let (a, b, c) = (0.7, -0.4, 2.5);
        let mut k = BusKernels::zeros(3);
        k.rho1[1] = a;
        k.rho1[2] = b;
        k.set_pair(1, 2, c);
        let rn = kernels_to_rn(&k).0;
        assert_eq!(rn.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0; 4]);
        assert_eq!(rn.row(1).iter().copied().collect::<Vec<_>>(), vec![a, 0.0, 0.0, c]);
        assert_eq!(rn.row(2).iter().copied().collect::<Vec<_>>(), vec![b, 0.0, c, 0.0]);
        assert_eq!(RnMatrix(rn).to_kernels(), k);
        assert_eq!(kernels_to_rn(&BusKernels::zeros(3)).0, DMatrix::zeros(3, 4));
    }

    #[test]
    fn stacked_identity() {
        let values = DMatrix::from_fn(20, 4, |t, b| 1.0 + 0.01 * ((t * 7 + b * 3) % 11) as f64);
        let s = VoltageSeries::from_matrix(values).unwrap();
        let zero = assemble_stacked(&s, &VolterraKernels::zeros(4)).unwrap();
        assert_eq!(zero.e, zero.v1);
        assert_eq!(zero.v1, s.values().transpose());
    }

    #[test]
    fn stacked_planted_residual_vanishes() {
        // v1 = v2 are free; v3 and v4 follow exactly from them.
        let t_len = 30;
        let mut values = DMatrix::zeros(t_len, 4);
        for t in 0..t_len {
            let x = 0.95 + 0.003 * ((t * 13) % 17) as f64;
            values[(t, 0)] = x;
            values[(t, 1)] = x;
            values[(t, 2)] = 0.4 * x + 0.3 * x + 0.2 * x * x;
            values[(t, 3)] = 0.5 * values[(t, 2)] + 0.1 * x - 0.05 * x * values[(t, 2)];
        }
        let s = VoltageSeries::from_matrix(values).unwrap();
        let mut k = VolterraKernels::zeros(4);
        k.buses[0].rho1[1] = 1.0;
        k.buses[1].rho1[0] = 1.0;
        k.buses[2].rho1[0] = 0.4;
        k.buses[2].rho1[1] = 0.3;
        k.buses[2].set_pair(0, 1, 0.2);
        k.buses[3].rho1[2] = 0.5;
        k.buses[3].rho1[0] = 0.1;
        k.buses[3].set_pair(2, 0, -0.05);
        assert!(k.satisfies_structure());
        assert!(k.satisfies_hierarchy());
        let model = assemble_stacked(&s, &k).unwrap();
        assert!(model.e.amax() < 1e-12);
        // Dropping the second-order part leaves a plain SEM.
        let mut sem = k.clone();
        for b in &mut sem.buses {
            b.rho2.fill(0.0);
        }
        let m = assemble_stacked(&s, &sem).unwrap();
        assert!((&m.e - (&m.v1 - &m.r1 * &m.v1)).amax() == 0.0);
    }

    #[test]
    fn hierarchy_enforcement() {
        let mut k = BusKernels::zeros(4);
        k.rho1[1] = 1.0;
        k.set_pair(1, 2, 0.3);
        k.set_pair(1, 3, 0.2);
        k.rho1[3] = 0.5;
        assert!(!k.satisfies_hierarchy());
        assert_eq!(k.enforce_hierarchy(), 1);
        assert!(k.satisfies_hierarchy());
        assert_eq!(k.pair(3, 1), 0.2);
    }

    #[test]
    fn records_round_trip() {
        let mut k = VolterraKernels::zeros(3);
        k.buses[0].rho1[2] = 0.25;
        k.buses[0].rho1[1] = -1.5;
        k.buses[0].set_pair(1, 2, 0.125);
        let recs = k.to_records();
        assert_eq!(recs[0].rho2, vec![PairRecord { i: 2, j: 3, value: 0.125 }]);
        assert!(recs[1].rho2.is_empty());
        assert_eq!(VolterraKernels::from_records(&recs).unwrap(), k);
    }
}
