//! Radial grid model: a tree of buses rooted at the substation (bus 0), one
//! line per non-root bus, and the incidence-matrix algebra built on top of it.
//!
//! Bus indices are contiguous: `0` is the root, `1..=N` are the non-root
//! buses, and line `n` is the line feeding bus `n` from its parent.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GridError;

/// Bus index; `0` is the substation.
pub type BusId = usize;

/// Index of the root (substation) bus.
pub const ROOT: BusId = 0;

/// A distribution line `(parent, child)` with per-unit series impedance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub child: BusId,
    pub parent: BusId,
    /// Series resistance (pu), strictly positive.
    pub r: f64,
    /// Series reactance (pu), non-negative.
    pub x: f64,
}

impl Line {
    pub fn new(child: BusId, parent: BusId, r: f64, x: f64) -> Self {
        Self { child, parent, r, x }
    }
}

/// A validated radial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    lines: Vec<Line>,
    children: Vec<Vec<BusId>>,
    // Non-root buses, parents before children.
    order: Vec<BusId>,
}

impl RadialGrid {
    /// Validates `lines` and builds the tree. The number of non-root buses is
    /// the largest bus index referenced.
    pub fn new(lines: Vec<Line>) -> Result<Self, GridError> {
        if lines.is_empty() {
            return Err(GridError::Empty);
        }
        let n = lines
            .iter()
            .map(|l| l.child.max(l.parent))
            .max()
            .unwrap_or(0);

        let mut slots: Vec<Option<Line>> = vec![None; n + 1];
        for line in &lines {
            if line.child == ROOT {
                return Err(GridError::BadIndex {
                    bus: line.child,
                    reason: "the root bus cannot be the child end of a line",
                });
            }
            if line.child == line.parent {
                return Err(GridError::CycleDetected { bus: line.child });
            }
            if !(line.r.is_finite() && line.x.is_finite()) || line.r <= 0.0 || line.x < 0.0 {
                return Err(GridError::InvalidImpedance {
                    child: line.child,
                    r: line.r,
                    x: line.x,
                });
            }
            if slots[line.child].is_some() {
                return Err(GridError::DuplicateChild { bus: line.child });
            }
            slots[line.child] = Some(*line);
        }

        let mut sorted = Vec::with_capacity(n);
        for (bus, slot) in slots.into_iter().enumerate().skip(1) {
            match slot {
                Some(line) => sorted.push(line),
                None => return Err(GridError::DisconnectedBus { bus }),
            }
        }

        let mut children = vec![Vec::new(); n + 1];
        for line in &sorted {
            children[line.parent].push(line.child);
        }

        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([ROOT]);
        while let Some(bus) = queue.pop_front() {
            for &c in &children[bus] {
                order.push(c);
                queue.push_back(c);
            }
        }
        if order.len() != n {
            let mut seen = vec![false; n + 1];
            for &b in &order {
                seen[b] = true;
            }
            // Every bus has exactly one parent, so unreachable buses sit on
            // (or hang below) a parent cycle.
            let bus = (1..=n).find(|&b| !seen[b]).unwrap_or(1);
            return Err(GridError::CycleDetected { bus });
        }

        Ok(Self {
            lines: sorted,
            children,
            order,
        })
    }

    /// Number of non-root buses (and of lines).
    pub fn n(&self) -> usize {
        self.lines.len()
    }

    /// Lines ordered by child index (`lines()[k]` feeds bus `k + 1`).
    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn line(&self, child: BusId) -> &Line {
        &self.lines[child - 1]
    }

    pub fn parent(&self, bus: BusId) -> BusId {
        self.lines[bus - 1].parent
    }

    pub fn children(&self, bus: BusId) -> &[BusId] {
        &self.children[bus]
    }

    /// Non-root buses in breadth-first order from the root.
    pub fn topological_order(&self) -> &[BusId] {
        &self.order
    }

    pub fn resistances(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.lines.iter().map(|l| l.r))
    }

    pub fn reactances(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.lines.iter().map(|l| l.x))
    }

    /// Depth of every bus (root has depth 0).
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.n() + 1];
        for &b in &self.order {
            depth[b] = depth[self.parent(b)] + 1;
        }
        depth
    }

    /// Bus-branch incidence matrix and its partition `[b0 B̃]`.
    pub fn incidence(&self) -> IncidenceDecomposition {
        let n = self.n();
        let mut b = DMatrix::zeros(n, n + 1);
        for line in &self.lines {
            let row = line.child - 1;
            b[(row, line.parent)] = -1.0;
            b[(row, line.child)] = 1.0;
        }
        let b0 = b.column(0).into_owned();
        let btilde = b.columns(1, n).into_owned();
        IncidenceDecomposition {
            b,
            b0,
            btilde,
            children: self
                .children
                .iter()
                .enumerate()
                .map(|(bus, c)| (bus, c.iter().copied().collect()))
                .collect(),
        }
    }

    /// LinDistFlow sensitivity matrices `R = B̃⁻¹ diag(r) B̃⁻ᵀ` and
    /// `X = B̃⁻¹ diag(x) B̃⁻ᵀ`.
    pub fn sensitivity_matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>), GridError> {
        let inv = self
            .incidence()
            .btilde
            .try_inverse()
            .ok_or(GridError::SingularIncidence)?;
        let r = &inv * DMatrix::from_diagonal(&self.resistances()) * inv.transpose();
        let x = &inv * DMatrix::from_diagonal(&self.reactances()) * inv.transpose();
        Ok((r, x))
    }

    /// Ground-truth edges and 2-length-path triads.
    pub fn ground_truth(&self) -> GroundTruth {
        let edges = self
            .lines
            .iter()
            .map(|l| ordered(l.parent, l.child))
            .collect();
        let mut triads = BTreeSet::new();
        for center in 1..=self.n() {
            let mut nbrs: Vec<BusId> = vec![self.parent(center)];
            nbrs.extend_from_slice(self.children(center));
            nbrs.sort_unstable();
            for (a, &i) in nbrs.iter().enumerate() {
                for &j in &nbrs[a + 1..] {
                    triads.insert(Triad::new(center, i, j));
                }
            }
        }
        GroundTruth { edges, triads }
    }

    /// Random radial feeder with `n` non-root buses. Bus `k` picks its parent
    /// among buses `0..k` with weight `(1 + depth)^degree_bias`, so a positive
    /// bias favours long laterals. Impedances are uniform in `[0.005, 0.05]` pu.
    pub fn random(n: usize, seed: u64, degree_bias: f64) -> Result<Self, GridError> {
        if n == 0 {
            return Err(GridError::Empty);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut depth = vec![0usize; n + 1];
        let mut lines = Vec::with_capacity(n);
        for child in 1..=n {
            let weights: Vec<f64> = depth[..child]
                .iter()
                .map(|&d| (1.0 + d as f64).powf(degree_bias))
                .collect();
            let total: f64 = weights.iter().sum();
            let mut pick = rng.random::<f64>() * total;
            let mut parent = child - 1;
            for (bus, w) in weights.iter().enumerate() {
                if pick < *w {
                    parent = bus;
                    break;
                }
                pick -= w;
            }
            depth[child] = depth[parent] + 1;
            let r = rng.random_range(IMPEDANCE_RANGE.0..=IMPEDANCE_RANGE.1);
            let x = rng.random_range(IMPEDANCE_RANGE.0..=IMPEDANCE_RANGE.1);
            lines.push(Line::new(child, parent, r, x));
        }
        Self::new(lines)
    }
}

/// Per-unit range for synthetic line resistance and reactance.
pub const IMPEDANCE_RANGE: (f64, f64) = (0.005, 0.05);

/// `B = [b0 B̃]` with row `i` for line `(π_i, i)`: `-1` at the parent
/// column, `+1` at the child column.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceDecomposition {
    pub b: DMatrix<f64>,
    pub b0: DVector<f64>,
    pub btilde: DMatrix<f64>,
    /// `C_j` for every bus `j` including the root.
    pub children: BTreeMap<BusId, BTreeSet<BusId>>,
}

impl IncidenceDecomposition {
    /// Recovers the child sets from the sign pattern of `B`.
    pub fn children_from_matrix(&self) -> BTreeMap<BusId, BTreeSet<BusId>> {
        let mut out: BTreeMap<BusId, BTreeSet<BusId>> =
            (0..self.b.ncols()).map(|j| (j, BTreeSet::new())).collect();
        for i in 0..self.b.nrows() {
            for j in 0..self.b.ncols() {
                if self.b[(i, j)] == -1.0 {
                    out.entry(j).or_default().insert(i + 1);
                }
            }
        }
        out
    }
}

/// Unordered triad: `center` is adjacent to both `i` and `j` (`i < j`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triad {
    pub center: BusId,
    pub i: BusId,
    pub j: BusId,
}

impl Triad {
    pub fn new(center: BusId, a: BusId, b: BusId) -> Self {
        let (i, j) = ordered(a, b);
        Self { center, i, j }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    /// Unordered edges `(min, max)`, root edges included.
    pub edges: BTreeSet<(BusId, BusId)>,
    pub triads: BTreeSet<Triad>,
}

impl GroundTruth {
    /// Edges between non-root buses only.
    pub fn non_root_edges(&self) -> BTreeSet<(BusId, BusId)> {
        self.edges.iter().copied().filter(|&(i, _)| i != ROOT).collect()
    }

    /// Triads whose three buses are all non-root.
    pub fn non_root_triads(&self) -> BTreeSet<Triad> {
        self.triads.iter().copied().filter(|t| t.i != ROOT).collect()
    }
}

pub(crate) fn ordered(a: BusId, b: BusId) -> (BusId, BusId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
