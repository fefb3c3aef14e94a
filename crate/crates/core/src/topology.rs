//! Communication graphs and mixing matrices for decentralized aggregation.
//!
//! A [`Graph`] is an undirected simple graph on nodes `0..n`. A
//! [`WeightMatrix`] is a graph-sparse `n x n` mixing matrix; repeated
//! multiplication by a valid one drives every node's value to the network
//! average, which requires
//!
//! * column sums equal to one,
//! * row sums equal to one,
//! * spectral radius of `A - 11^T/n` strictly below one.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Rejection-sampling budget before falling back to a spanning-tree seeded draw.
const MAX_CONNECTIVITY_ATTEMPTS: usize = 10_000;

const POWER_ITERATIONS: usize = 1000;
const POWER_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("a graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("density must lie in (0, 1], got {0}")]
    DensityOutOfRange(f64),
    #[error(
        "density {density} is infeasible for a connected graph on {n} nodes \
         (minimum is 2/n = {minimum:.6})"
    )]
    InfeasibleDensity { n: usize, density: f64, minimum: f64 },
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("edge ({i}, {j}) references a node outside 0..{n}")]
    NodeOutOfRange { i: usize, j: usize, n: usize },
    #[error("edge ({0}, {1}) appears more than once")]
    DuplicateEdge(usize, usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Undirected simple graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<bool>>,
}

impl Graph {
    /// Builds a graph from unordered pairs. Pairs are canonicalized to
    /// `(min, max)` and sorted. Connectivity is not required here; see
    /// [`Graph::is_connected`].
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, TopologyError> {
        if n < 2 {
            return Err(TopologyError::TooFewNodes(n));
        }
        let mut adjacency = vec![vec![false; n]; n];
        let mut canonical = Vec::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(TopologyError::NodeOutOfRange { i, j, n });
            }
            if i == j {
                return Err(TopologyError::SelfLoop(i, j));
            }
            if adjacency[i][j] {
                return Err(TopologyError::DuplicateEdge(i, j));
            }
            adjacency[i][j] = true;
            adjacency[j][i] = true;
            canonical.push((i.min(j), i.max(j)));
        }
        canonical.sort_unstable();
        Ok(Self {
            n,
            edges: canonical,
            adjacency,
        })
    }

    pub fn complete(n: usize) -> Result<Self, TopologyError> {
        Self::new(n, canonical_pairs(n))
    }

    pub fn path(n: usize) -> Result<Self, TopologyError> {
        Self::new(n, (1..n).map(|j| (j - 1, j)))
    }

    /// Star with node 0 as the hub.
    pub fn star(n: usize) -> Result<Self, TopologyError> {
        Self::new(n, (1..n).map(|j| (0, j)))
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Canonical `(i, j)` pairs with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Adjacency indicator `b_kj`.
    pub fn is_adjacent(&self, k: usize, j: usize) -> bool {
        self.adjacency[k][j]
    }

    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.adjacency[k][j]).collect()
    }

    pub fn degree(&self, k: usize) -> usize {
        self.adjacency[k].iter().filter(|&&b| b).count()
    }

    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.n * (self.n - 1) / 2
    }

    /// Breadth-first search from node 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for v in 0..self.n {
                if self.adjacency[u][v] && !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        reached == self.n
    }

    /// Edge-list text: header `n m`, then one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{} {}\n", self.n, self.edges.len());
        for (i, j) in &self.edges {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(idx, l)| (idx + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (header_line, header) = lines.next().ok_or(TopologyError::Parse {
            line: 1,
            message: "missing `n m` header".into(),
        })?;
        let (n, m) = parse_pair(header_line, header)?;
        let mut edges = Vec::with_capacity(m);
        for (line, body) in lines {
            edges.push(parse_pair(line, body)?);
        }
        if edges.len() != m {
            return Err(TopologyError::Parse {
                line: header_line,
                message: format!("header declares {m} edges, found {}", edges.len()),
            });
        }
        Self::new(n, edges)
    }
}

fn parse_pair(line: usize, body: &str) -> Result<(usize, usize), TopologyError> {
    let bad = |message: String| TopologyError::Parse { line, message };
    let mut parts = body.split_whitespace();
    let mut next = || -> Result<usize, TopologyError> {
        let tok = parts.next().ok_or_else(|| bad("expected two integers".into()))?;
        tok.parse::<usize>()
            .map_err(|e| bad(format!("invalid integer `{tok}`: {e}")))
    };
    let a = next()?;
    let b = next()?;
    if parts.next().is_some() {
        return Err(bad("expected exactly two integers".into()));
    }
    Ok((a, b))
}

/// All unordered pairs `(i, j)`, `i < j`, in lexicographic order.
fn canonical_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Graph density `2m / (n(n-1))`.
pub fn graph_density(g: &Graph) -> f64 {
    let n = g.node_count() as f64;
    2.0 * g.edge_count() as f64 / (n * (n - 1.0))
}

/// Edge count realizing `density` on `n` nodes, `round(density * n(n-1)/2)`.
pub fn edges_for_density(n: usize, density: f64) -> usize {
    (density * (n * (n - 1)) as f64 / 2.0).round() as usize
}

/// Samples a connected graph with exactly `round(density * n(n-1)/2)` edges.
///
/// Edges are drawn uniformly among all `m`-edge graphs (partial Fisher-Yates
/// over the canonical pair list) and redrawn until connected. Near the tree
/// limit, where connected draws are vanishingly rare, a uniform random
/// recursive tree is drawn and padded with uniform extra edges instead.
pub fn generate_graph(n: usize, density: f64, seed: u64) -> Result<Graph, TopologyError> {
    if n < 2 {
        return Err(TopologyError::TooFewNodes(n));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(TopologyError::DensityOutOfRange(density));
    }
    let minimum = 2.0 / n as f64;
    let m = edges_for_density(n, density);
    if density < minimum - 1e-12 || m < n - 1 {
        return Err(TopologyError::InfeasibleDensity { n, density, minimum });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = canonical_pairs(n);
    for _ in 0..MAX_CONNECTIVITY_ATTEMPTS {
        partial_shuffle(&mut pairs, m, &mut rng);
        if spans(n, &pairs[..m]) {
            return Graph::new(n, pairs[..m].iter().copied());
        }
    }

    // Tree-seeded fallback.
    let mut order: Vec<usize> = (0..n).collect();
    let len = order.len();
    partial_shuffle(&mut order, len, &mut rng);
    let mut in_tree = vec![vec![false; n]; n];
    let mut edges = Vec::with_capacity(m);
    for t in 1..n {
        let parent = order[rng.random_range(0..t)];
        let child = order[t];
        in_tree[parent][child] = true;
        in_tree[child][parent] = true;
        edges.push((parent.min(child), parent.max(child)));
    }
    let mut rest: Vec<(usize, usize)> = canonical_pairs(n)
        .into_iter()
        .filter(|&(i, j)| !in_tree[i][j])
        .collect();
    let extra = m - (n - 1);
    partial_shuffle(&mut rest, extra, &mut rng);
    edges.extend_from_slice(&rest[..extra]);
    Graph::new(n, edges)
}

/// Fisher-Yates restricted to the first `count` positions.
fn partial_shuffle<T>(items: &mut [T], count: usize, rng: &mut impl Rng) {
    let len = items.len();
    for i in 0..count.min(len) {
        let j = rng.random_range(i..len);
        items.swap(i, j);
    }
}

fn spans(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = n;
    for &(i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            components -= 1;
        }
    }
    components == 1
}

/// Dense row-major `n x n` mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "weight matrix must be square");
        Self {
            n,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for k in 0..n {
            data[k * n + k] = 1.0;
        }
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Entry `a_kj`.
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.data[k * self.n + j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    /// `y = A x` for a length-`n` vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|k| self.row(k).iter().zip(x).map(|(a, v)| a * v).sum())
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|k| (0..k).all(|j| (self.get(k, j) - self.get(j, k)).abs() <= tol))
    }
}

impl fmt::Display for WeightMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.n {
            let row: Vec<String> = self.row(k).iter().map(|v| format!("{v:.6}")).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Metropolis-Hastings weights: `a_kj = 1 / (1 + max(deg k, deg j))` on
/// edges, diagonal fills each row to one. Symmetric, hence doubly stochastic.
pub fn metropolis_weights(g: &Graph) -> Result<WeightMatrix, TopologyError> {
    if !g.is_connected() {
        return Err(TopologyError::Disconnected);
    }
    let n = g.node_count();
    let degree: Vec<usize> = (0..n).map(|k| g.degree(k)).collect();
    let mut data = vec![0.0; n * n];
    for &(i, j) in g.edges() {
        let w = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
        data[i * n + j] = w;
        data[j * n + i] = w;
    }
    for k in 0..n {
        let off: f64 = (0..n).filter(|&j| j != k).map(|j| data[k * n + j]).sum();
        data[k * n + k] = 1.0 - off;
    }
    Ok(WeightMatrix { n, data })
}

/// Outcome of one weight-matrix condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub passed: bool,
    /// Largest absolute violation (or the spectral radius for condition iii).
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightValidation {
    pub column_sums: ConditionCheck,
    pub row_sums: ConditionCheck,
    pub spectral: ConditionCheck,
    pub sparsity: ConditionCheck,
}

impl WeightValidation {
    pub fn all_passed(&self) -> bool {
        self.column_sums.passed && self.row_sums.passed && self.spectral.passed && self.sparsity.passed
    }
}

/// Checks the three averaging conditions plus the graph sparsity pattern.
/// Never fails; failures are reported per condition.
pub fn validate_weight_matrix(w: &WeightMatrix, g: &Graph, tol: f64) -> WeightValidation {
    let n = w.size();
    assert_eq!(n, g.node_count(), "weight matrix and graph sizes differ");
    let col_err = (0..n)
        .map(|j| ((0..n).map(|k| w.get(k, j)).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let row_err = (0..n)
        .map(|k| (w.row(k).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut sparse_err: f64 = 0.0;
    for k in 0..n {
        for j in 0..n {
            if k != j && !g.is_adjacent(k, j) {
                sparse_err = sparse_err.max(w.get(k, j).abs());
            }
        }
    }
    let rho = consensus_spectral_radius(w);
    WeightValidation {
        column_sums: ConditionCheck {
            passed: col_err <= tol,
            value: col_err,
        },
        row_sums: ConditionCheck {
            passed: row_err <= tol,
            value: row_err,
        },
        spectral: ConditionCheck {
            passed: rho < 1.0 - tol,
            value: rho,
        },
        sparsity: ConditionCheck {
            passed: sparse_err <= tol,
            value: sparse_err,
        },
    }
}

/// Spectral radius of `A - 11^T/n` by power iteration from a fixed start vector.
pub fn consensus_spectral_radius(w: &WeightMatrix) -> f64 {
    let n = w.size();
    let inv_n = 1.0 / n as f64;
    let apply = |x: &[f64]| -> Vec<f64> {
        let mean: f64 = x.iter().sum::<f64>() * inv_n;
        w.apply(x).into_iter().map(|v| v - mean).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut norm = l2(&x);
    if norm == 0.0 {
        return 0.0;
    }
    x.iter_mut().for_each(|v| *v /= norm);
    let mut rho = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let y = apply(&x);
        norm = l2(&y);
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - rho).abs() < POWER_TOLERANCE;
        rho = norm;
        x = y.into_iter().map(|v| v / norm).collect();
        if converged {
            break;
        }
    }
    rho
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bfs_reaches_all(g: &Graph) -> bool {
        let n = g.node_count();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    #[test]
    fn full_density_gives_complete_graph() {
        for seed in 0..5 {
            let g = generate_graph(4, 1.0, seed).unwrap();
            assert_eq!(g.edge_count(), 6);
            assert!(g.is_complete());
        }
    }

    #[test]
    fn n10_density_04_has_18_edges_and_is_connected() {
        let g = generate_graph(10, 0.4, 7).unwrap();
        assert_eq!(g.edge_count(), 18);
        assert!(bfs_reaches_all(&g));
    }

    #[test]
    fn infeasible_density_rejected() {
        let err = generate_graph(3, 0.1, 0).unwrap_err();
        assert!(matches!(err, TopologyError::InfeasibleDensity { n: 3, .. }));
        assert!(err.to_string().contains("infeasible"));
        assert_eq!(generate_graph(1, 1.0, 0).unwrap_err(), TopologyError::TooFewNodes(1));
        assert!(matches!(
            generate_graph(5, 1.5, 0),
            Err(TopologyError::DensityOutOfRange(_))
        ));
    }

    #[test]
    fn tree_density_uses_fallback_and_stays_connected() {
        // m = n - 1 on 60 nodes: rejection sampling essentially never succeeds.
        let g = generate_graph(60, 2.0 / 60.0, 3).unwrap();
        assert_eq!(g.edge_count(), 59);
        assert!(bfs_reaches_all(&g));
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate_graph(25, 0.3, 11).unwrap();
        let b = generate_graph(25, 0.3, 11).unwrap();
        let c = generate_graph(25, 0.3, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn densities_of_named_graphs() {
        assert_eq!(graph_density(&Graph::complete(5).unwrap()), 1.0);
        assert_eq!(graph_density(&Graph::path(5).unwrap()), 0.4);
        // star on 10 nodes: 9 edges, 18 / 90
        assert_eq!(graph_density(&Graph::star(10).unwrap()), 0.2);
    }

    #[test]
    fn graph_rejects_bad_edges() {
        assert_eq!(Graph::new(3, [(1, 1)]).unwrap_err(), TopologyError::SelfLoop(1, 1));
        assert_eq!(
            Graph::new(3, [(0, 1), (1, 0)]).unwrap_err(),
            TopologyError::DuplicateEdge(1, 0)
        );
        assert!(matches!(
            Graph::new(3, [(0, 3)]),
            Err(TopologyError::NodeOutOfRange { .. })
        ));
    }

    #[test]
    fn metropolis_on_complete_graph_is_uniform() {
        for n in [2, 3, 7] {
            let w = metropolis_weights(&Graph::complete(n).unwrap()).unwrap();
            for k in 0..n {
                for j in 0..n {
                    assert!((w.get(k, j) - 1.0 / n as f64).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn metropolis_on_path3_matches_hand_computation() {
        // degrees (1, 2, 1): both edges get 1/(1+2) = 1/3
        let w = metropolis_weights(&Graph::path(3).unwrap()).unwrap();
        let third = 1.0 / 3.0;
        let expected = [
            [2.0 * third, third, 0.0],
            [third, third, third],
            [0.0, third, 2.0 * third],
        ];
        for k in 0..3 {
            for j in 0..3 {
                assert!((w.get(k, j) - expected[k][j]).abs() < 1e-15, "({k},{j})");
            }
        }
        assert!(validate_weight_matrix(&w, &Graph::path(3).unwrap(), 1e-12).all_passed());
    }

    #[test]
    fn metropolis_rejects_disconnected() {
        let g = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
        assert_eq!(metropolis_weights(&g).unwrap_err(), TopologyError::Disconnected);
    }

    #[test]
    fn identity_fails_spectral_condition() {
        let g = Graph::path(5).unwrap();
        let report = validate_weight_matrix(&WeightMatrix::identity(5), &g, 1e-9);
        assert!(report.column_sums.passed && report.row_sums.passed && report.sparsity.passed);
        assert!(!report.spectral.passed);
        assert!((report.spectral.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn short_row_fails_row_condition() {
        let g = Graph::complete(3).unwrap();
        let mut rows = vec![vec![1.0 / 3.0; 3]; 3];
        rows[1][1] -= 0.1;
        let report = validate_weight_matrix(&WeightMatrix::from_rows(rows), &g, 1e-9);
        assert!(!report.row_sums.passed);
        assert!((report.row_sums.value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn off_pattern_weight_fails_sparsity() {
        let g = Graph::path(3).unwrap();
        let mut rows = vec![vec![1.0 / 3.0; 3]; 3];
        rows[0][2] = 1.0 / 3.0;
        let report = validate_weight_matrix(&WeightMatrix::from_rows(rows), &g, 1e-9);
        assert!(!report.sparsity.passed);
    }

    #[test]
    fn edge_list_round_trip_and_errors() {
        let g = generate_graph(12, 0.5, 4).unwrap();
        assert_eq!(Graph::from_edge_list(&g.to_edge_list()).unwrap(), g);
        let err = Graph::from_edge_list("3 2\n0 1\n1 x\n").unwrap_err();
        assert!(matches!(err, TopologyError::Parse { line: 3, .. }));
        let err = Graph::from_edge_list("3 3\n0 1\n1 2\n").unwrap_err();
        assert!(matches!(err, TopologyError::Parse { line: 1, .. }));
    }
}
