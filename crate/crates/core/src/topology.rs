//! Communication graphs and symmetric doubly-stochastic coupling matrices.

use std::collections::{BTreeSet, VecDeque};

use crate::error::{CoreError, Result};
use crate::linalg::{symmetric_eigenvalues, Matrix};
use crate::scalar::Scalar;

/// Undirected simple graph over agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list; pairs are normalized to `(lo, hi)`
    /// and duplicates collapse. Self-loops and out-of-range agents are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(CoreError::InvalidTopology("graph needs at least one agent".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(CoreError::InvalidTopology(format!("self-loop at agent {i}")));
            }
            if i >= n || j >= n {
                return Err(CoreError::InvalidTopology(format!(
                    "edge ({i}, {j}) references an agent outside 0..{n}"
                )));
            }
            set.insert((i.min(j), i.max(j)));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &set {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        neighbors.iter_mut().for_each(|v| v.sort_unstable());
        Ok(Self {
            n,
            edges: set,
            neighbors,
        })
    }

    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(CoreError::InvalidTopology(format!(
                "ring needs at least 3 agents, got {n}"
            )));
        }
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))))
    }

    pub fn star(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (0, i)))
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn min_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Relabels agents: agent `i` becomes `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        Self::new(self.n, self.edges().map(|(i, j)| (perm[i], perm[j])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightRule<S> {
    /// `w_ij = 1 / (1 + max(deg i, deg j))`
    Metropolis,
    /// The same weight on every edge.
    Uniform(S),
}

/// Symmetric doubly-stochastic mixing matrix supported on a connected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix<S> {
    graph: Graph,
    weights: Matrix<S>,
    rho: S,
}

fn stochasticity_tol<S: Scalar>() -> S {
    S::lit(1e-12).max(S::epsilon() * S::lit(64.0))
}

impl<S: Scalar> CouplingMatrix<S> {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn weights(&self) -> &Matrix<S> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> S {
        self.weights[(i, j)]
    }

    pub fn n_agents(&self) -> usize {
        self.graph.n_agents()
    }

    pub fn rho(&self) -> S {
        self.rho
    }

    /// `max_i |sum_j w_ij - 1|`
    pub fn row_sum_error(&self) -> S {
        (0..self.n_agents())
            .map(|i| (self.weights.row(i).iter().copied().sum::<S>() - S::one()).abs())
            .fold(S::zero(), S::max)
    }

    /// Builds from explicit off-diagonal edge weights; diagonals absorb the
    /// remainder of each row. All invariants are checked here.
    fn from_edge_weights(graph: Graph, weight_of: impl Fn(usize, usize) -> S) -> Result<Self> {
        if !graph.is_connected() {
            return Err(CoreError::Disconnected);
        }
        let n = graph.n_agents();
        let mut w = Matrix::zeros(n, n);
        for (i, j) in graph.edges() {
            let wij = weight_of(i, j);
            if !(wij > S::zero()) || !wij.is_finite() {
                return Err(CoreError::InvalidTopology(format!(
                    "edge ({i}, {j}) weight {wij} must be positive"
                )));
            }
            w[(i, j)] = wij;
            w[(j, i)] = wij;
        }
        for i in 0..n {
            let off: S = graph.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
            let diag = S::one() - off;
            if !(diag > S::zero()) {
                return Err(CoreError::InvalidTopology(format!(
                    "diagonal weight nonpositive at agent {i}: off-diagonal row sum {off}"
                )));
            }
            w[(i, i)] = diag;
        }
        let mut out = Self {
            graph,
            weights: w,
            rho: S::zero(),
        };
        if out.row_sum_error() >= stochasticity_tol() {
            return Err(CoreError::InvalidTopology(format!(
                "row sums deviate from 1 by {}",
                out.row_sum_error()
            )));
        }
        out.rho = spectral_gap(&out)?;
        Ok(out)
    }
}

/// Ring of `n >= 3` agents with neighbour weight `w` in (0, 1/2).
pub fn build_ring<S: Scalar>(n: usize, w: S) -> Result<CouplingMatrix<S>> {
    if n < 3 {
        return Err(CoreError::InvalidTopology(format!(
            "ring needs at least 3 agents, got {n}"
        )));
    }
    if !(w > S::zero() && w < S::lit(0.5)) {
        return Err(CoreError::InvalidTopology(format!(
            "ring weight {w} outside (0, 1/2): diagonal weight nonpositive"
        )));
    }
    CouplingMatrix::from_edge_weights(Graph::ring(n)?, |_, _| w)
}

pub fn build_from_graph<S: Scalar>(g: Graph, rule: WeightRule<S>) -> Result<CouplingMatrix<S>> {
    if !g.is_connected() {
        return Err(CoreError::Disconnected);
    }
    match rule {
        WeightRule::Metropolis => {
            let deg = g.degrees();
            CouplingMatrix::from_edge_weights(g, move |i, j| {
                S::one() / S::from_count(1 + deg[i].max(deg[j]))
            })
        }
        WeightRule::Uniform(w) => {
            let dmax = S::from_count(g.max_degree());
            if !(w > S::zero()) || !(dmax * w < S::one()) {
                return Err(CoreError::InvalidTopology(format!(
                    "uniform weight {w} violates row-stochasticity at max degree {}: off-diagonal sum {}",
                    g.max_degree(),
                    dmax * w
                )));
            }
            CouplingMatrix::from_edge_weights(g, move |_, _| w)
        }
    }
}

/// `max(|pi_2|, |pi_N|)` over the eigenvalues of `W`, with `pi_1 = 1` excluded.
pub fn spectral_gap<S: Scalar>(w: &CouplingMatrix<S>) -> Result<S> {
    let eig = symmetric_eigenvalues(w.weights())?;
    let rho = match eig.len() {
        0 | 1 => S::zero(),
        n => eig[1].abs().max(eig[n - 1].abs()),
    };
    if rho >= S::one() - S::lit(1e-12).max(S::epsilon() * S::lit(4.0)) {
        return Err(CoreError::DegenerateSpectrum {
            rho: rho.to_f64_lossy(),
        });
    }
    Ok(rho)
}

/// Single-agent "network" (`W = [1]`); spectral quantity 0.
pub fn singleton<S: Scalar>() -> CouplingMatrix<S> {
    CouplingMatrix {
        graph: Graph::new(1, []).expect("one-node graph"),
        weights: Matrix::identity(1),
        rho: S::zero(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ring_of_five_matches_experiment_weights() {
        let w = build_ring(5, 0.3f64).unwrap();
        for i in 0..5 {
            assert_relative_eq!(w.weight(i, i), 0.4, epsilon = 1e-15);
            assert_eq!(w.weight(i, (i + 1) % 5), 0.3);
            assert_eq!(w.weight(i, (i + 4) % 5), 0.3);
            assert_eq!(w.weight(i, (i + 2) % 5), 0.0);
        }
        // 0.4 + 0.6 cos(2 pi / 5)
        assert_relative_eq!(w.rho(), 0.585_410_196_624_968_5, epsilon = 1e-12);
    }

    #[test]
    fn ring_weight_bounds() {
        let w = build_ring(3, 1.0f64 / 3.0).unwrap();
        assert_relative_eq!(w.weight(0, 0), 1.0 / 3.0, epsilon = 1e-15);
        assert!(build_ring(3, 0.5f64).is_err());
        assert!(build_ring(5, 0.0f64).is_err());
        assert!(build_ring(2, 0.3f64).is_err());
    }

    #[test]
    fn ring_of_four_quarter_weights() {
        // eigenvalues 0.5 + 0.5 cos(pi k / 2): {1, 0.5, 0, 0.5}
        let w = build_ring(4, 0.25f64).unwrap();
        assert_relative_eq!(w.rho(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn two_node_metropolis() {
        let w = build_from_graph(Graph::complete(2).unwrap(), WeightRule::<f64>::Metropolis).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(w.weight(i, j), 0.5, epsilon = 1e-15);
            }
        }
        assert!(w.rho().abs() < 1e-14);
    }

    #[test]
    fn path_of_three_metropolis() {
        let w = build_from_graph(Graph::path(3).unwrap(), WeightRule::<f64>::Metropolis).unwrap();
        assert_relative_eq!(w.weight(0, 1), 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w.weight(1, 2), 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w.weight(0, 0), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w.weight(1, 1), 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(w.weight(2, 2), 2.0 / 3.0, epsilon = 1e-15);
        assert!(w.row_sum_error() < 1e-12);
        for j in 0..3 {
            let col: f64 = (0..3).map(|i| w.weight(i, j)).sum();
            assert_relative_eq!(col, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn star_uniform_overweight_rejected() {
        let err = build_from_graph(Graph::star(4).unwrap(), WeightRule::Uniform(0.4f64)).unwrap_err();
        assert!(matches!(err, CoreError::InvalidTopology(_)));
    }

    #[test]
    fn disconnected_rejected() {
        let g = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
        assert!(!g.is_connected());
        assert_eq!(
            build_from_graph(g, WeightRule::<f64>::Metropolis).unwrap_err(),
            CoreError::Disconnected
        );
    }

    #[test]
    fn graph_rejects_self_loops_and_out_of_range() {
        assert!(Graph::new(3, [(1, 1)]).is_err());
        assert!(Graph::new(3, [(0, 3)]).is_err());
    }

    #[test]
    fn single_precision_ring() {
        let w = build_ring(5, 0.3f32).unwrap();
        assert!((w.rho() - 0.585_410_2).abs() < 1e-5);
    }
}
