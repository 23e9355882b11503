//! Communication graphs and the mixing matrices built on them.
//!
//! A [`WeightMatrix`] can only be obtained through validation, so holding one
//! means the matrix is symmetric, doubly stochastic, has positive self
//! weights, and a spectral gap `η = ‖W − 11ᵀ/m‖ < 1`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::sorted_symmetric_eigen;

/// Absolute tolerance on symmetry and on each row/column sum.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("graph must have at least one agent")]
    Empty,
    #[error("self-loop on agent {0}; self weights are implicit")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) has an endpoint outside [0, {2})")]
    EndpointOutOfRange(usize, usize, usize),
    #[error("graph is disconnected: agent {0} is unreachable from agent 0")]
    DisconnectedGraph(usize),
    #[error("degenerate weights: w[{0}][{0}] = {1} is not positive")]
    DegenerateWeights(usize, f64),
    #[error("weight matrix must be square and non-empty, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("NotSymmetric: w[{i}][{j}] = {a} but w[{j}][{i}] = {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("NotStochastic: {which} {index} sums to {sum}")]
    NotStochastic { which: &'static str, index: usize, sum: f64 },
    #[error("NegativeEntry: w[{i}][{j}] = {value}")]
    NegativeEntry { i: usize, j: usize, value: f64 },
    #[error("ZeroSelfWeight: w[{0}][{0}] = 0")]
    ZeroSelfWeight(usize),
    #[error("SpectralGapViolation: eta = {0} must be < 1")]
    SpectralGapViolation(f64),
    #[error("unknown topology '{0}' (expected complete, ring, path or ring_plus_chord)")]
    UnknownTopology(String),
    #[error("non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
}

/// Undirected simple graph on agents `0..m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Edges are stored as `(min, max)`; duplicates collapse.
    pub fn new(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, TopologyError> {
        if m == 0 {
            return Err(TopologyError::Empty);
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(TopologyError::SelfLoop(i));
            }
            if i >= m || j >= m {
                return Err(TopologyError::EndpointOutOfRange(i, j, m));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { m, edges: set })
    }

    pub fn agents(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.m];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// First agent not reachable from agent 0, if any.
    pub fn first_unreachable(&self) -> Option<usize> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &n in &adj[v] {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        seen.iter().position(|s| !s)
    }

    pub fn is_connected(&self) -> bool {
        self.first_unreachable().is_none()
    }
}

/// Named graph families available from configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinTopology {
    Complete,
    Ring,
    Path,
    RingPlusChord,
}

impl BuiltinTopology {
    pub fn name(self) -> &'static str {
        match self {
            Self::Complete => "complete",
            Self::Ring => "ring",
            Self::Path => "path",
            Self::RingPlusChord => "ring_plus_chord",
        }
    }
}

impl fmt::Display for BuiltinTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinTopology {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "complete" => Ok(Self::Complete),
            "ring" => Ok(Self::Ring),
            "path" => Ok(Self::Path),
            "ring_plus_chord" => Ok(Self::RingPlusChord),
            other => Err(TopologyError::UnknownTopology(other.to_string())),
        }
    }
}

/// Build a named graph on `m` agents.
///
/// `ring_plus_chord` is the ring plus the edge `(0, ⌊m/2⌋)`; for small `m`
/// the chord may coincide with a ring edge or vanish.
pub fn builtin_topology(name: &str, m: usize) -> Result<Graph, TopologyError> {
    builtin_graph(name.parse()?, m)
}

pub fn builtin_graph(kind: BuiltinTopology, m: usize) -> Result<Graph, TopologyError> {
    if m == 0 {
        return Err(TopologyError::Empty);
    }
    let path = (0..m.saturating_sub(1)).map(|i| (i, i + 1));
    let edges: Vec<(usize, usize)> = match kind {
        BuiltinTopology::Complete => (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect(),
        BuiltinTopology::Path => path.collect(),
        BuiltinTopology::Ring | BuiltinTopology::RingPlusChord => {
            let mut e: Vec<_> = path.collect();
            if m > 2 {
                e.push((m - 1, 0));
            }
            if kind == BuiltinTopology::RingPlusChord && m / 2 != 0 {
                e.push((0, m / 2));
            }
            e
        }
    };
    Graph::new(m, edges)
}

/// Validated symmetric doubly-stochastic mixing matrix with cached `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: DMatrix<f64>,
    eta: f64,
}

impl WeightMatrix {
    pub fn agents(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Spectral gap `‖W − 11ᵀ/m‖`, computed once at validation.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    /// Agents `j` with `w_ij > 0`, including `i` itself.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.agents()).filter(move |&j| self.w[(i, j)] > 0.0)
    }

    /// Row-major copy, as written to configs.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.w.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Metropolis-Hastings weights: `w_ij = 1 / (1 + max(deg_i, deg_j))` on edges,
/// self weight takes up the remainder of each row.
pub fn build_metropolis_weights(g: &Graph) -> Result<WeightMatrix, TopologyError> {
    if let Some(v) = g.first_unreachable() {
        return Err(TopologyError::DisconnectedGraph(v));
    }
    let m = g.agents();
    let deg = g.degrees();
    let mut w = DMatrix::zeros(m, m);
    for (i, j) in g.edges() {
        let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        let self_weight = 1.0 - off;
        if self_weight <= 0.0 {
            return Err(TopologyError::DegenerateWeights(i, self_weight));
        }
        w[(i, i)] = self_weight;
    }
    validate_weight_matrix(w)
}

/// Largest singular value of `W − 11ᵀ/m`.
///
/// Computed from a symmetric eigendecomposition of the symmetrized
/// deviation, so it assumes `w` is (numerically) symmetric.
pub fn spectral_gap(w: &DMatrix<f64>) -> f64 {
    let m = w.nrows();
    let dev = w - DMatrix::from_element(m, m, 1.0 / m as f64);
    let sym = (&dev + dev.transpose()) * 0.5;
    let (values, _) = sorted_symmetric_eigen(&sym);
    values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Check the mixing-matrix assumptions and cache `η`.
pub fn validate_weight_matrix(w: DMatrix<f64>) -> Result<WeightMatrix, TopologyError> {
    let (rows, cols) = w.shape();
    if rows == 0 || rows != cols {
        return Err(TopologyError::NotSquare { rows, cols });
    }
    let m = rows;
    for i in 0..m {
        for j in 0..m {
            if !w[(i, j)].is_finite() {
                return Err(TopologyError::NonFinite(i, j));
            }
        }
    }
    for i in 0..m {
        for j in i + 1..m {
            let (a, b) = (w[(i, j)], w[(j, i)]);
            if (a - b).abs() > STOCHASTIC_TOL {
                return Err(TopologyError::NotSymmetric { i, j, a, b });
            }
        }
    }
    for i in 0..m {
        for j in 0..m {
            if w[(i, j)] < 0.0 {
                return Err(TopologyError::NegativeEntry { i, j, value: w[(i, j)] });
            }
        }
        if w[(i, i)] == 0.0 {
            return Err(TopologyError::ZeroSelfWeight(i));
        }
    }
    for i in 0..m {
        let row: f64 = w.row(i).sum();
        if (row - 1.0).abs() > STOCHASTIC_TOL {
            return Err(TopologyError::NotStochastic { which: "row", index: i, sum: row });
        }
        let col: f64 = w.column(i).sum();
        if (col - 1.0).abs() > STOCHASTIC_TOL {
            return Err(TopologyError::NotStochastic { which: "column", index: i, sum: col });
        }
    }
    let eta = spectral_gap(&w);
    if eta >= 1.0 {
        return Err(TopologyError::SpectralGapViolation(eta));
    }
    Ok(WeightMatrix { w, eta })
}

/// Validate a row-major matrix as read from a config.
pub fn weight_matrix_from_rows(rows: &[Vec<f64>]) -> Result<WeightMatrix, TopologyError> {
    let m = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != m) {
        return Err(TopologyError::NotSquare { rows: m, cols: bad.len() });
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    validate_weight_matrix(DMatrix::from_row_slice(m, m, &flat))
}
