//! Communication digraph and its doubly-stochastic mixing matrix.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row and column sums.
pub const STOCHASTIC_TOL: f64 = 1e-10;

pub const DOUBLY_STOCHASTIC: &str = "doubly-stochastic mixing weights";
pub const STRONG_CONNECTIVITY: &str = "strongly connected communication graph";

/// Weighted adjacency `W` certified doubly stochastic over a strongly
/// connected digraph. Row `i` holds the weights agent `i` applies to the
/// values received from its in-neighbors (itself included).
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    in_neighbors: Vec<Vec<usize>>,
    out_neighbors: Vec<Vec<usize>>,
}

impl MixingMatrix {
    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.nrows() == 0
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    /// `N_i`: agents whose values agent `i` mixes, including `i`.
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    /// Agents that receive agent `j`'s broadcasts (excluding `j`).
    pub fn out_neighbors(&self, j: usize) -> &[usize] {
        &self.out_neighbors[j]
    }

    /// Number of directed edges `j → i` with `i ≠ j`.
    pub fn directed_edge_count(&self) -> usize {
        self.out_neighbors.iter().map(Vec::len).sum()
    }

    /// Directed edges `(from, to)` without self loops, in row order.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (i, nbrs) in self.in_neighbors.iter().enumerate() {
            edges.extend(nbrs.iter().filter(|&&j| j != i).map(|&j| (j, i)));
        }
        edges
    }
}

/// Metropolis–Hastings weights on a connected undirected graph:
/// `w_ij = 1/(1+max(deg_i, deg_j))` on edges and `w_ii = 1 − Σ_{j≠i} w_ij`.
pub fn metropolis_weights(undirected_edges: &[(usize, usize)], n: usize) -> Result<MixingMatrix> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "metropolis weights need at least 2 nodes, got {n}"
        )));
    }
    let edges = normalize_undirected(undirected_edges, n)?;
    let mut degree = vec![0usize; n];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    let mut w = DMatrix::zeros(n, n);
    for &(a, b) in &edges {
        let wij = 1.0 / (1.0 + degree[a].max(degree[b]) as f64);
        w[(a, b)] = wij;
        w[(b, a)] = wij;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    let directed: Vec<(usize, usize)> = edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    validate(w, Some(&directed))
}

fn normalize_undirected(edges: &[(usize, usize)], n: usize) -> Result<BTreeSet<(usize, usize)>> {
    let mut set = BTreeSet::new();
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::InvalidParameter(format!(
                "edge ({a},{b}) references a node outside 0..{n}"
            )));
        }
        if a != b {
            set.insert((a.min(b), a.max(b)));
        }
    }
    Ok(set)
}

/// Certifies a user-supplied weight matrix. When `edges` is given as directed
/// `(from, to)` pairs, the positive off-diagonal pattern must match it exactly.
pub fn validate(w: DMatrix<f64>, edges: Option<&[(usize, usize)]>) -> Result<MixingMatrix> {
    if !w.is_square() {
        return Err(Error::InvalidParameter(format!(
            "mixing matrix is {}x{}, expected square",
            w.nrows(),
            w.ncols()
        )));
    }
    let n = w.nrows();
    if n == 0 {
        return Err(Error::InvalidParameter("mixing matrix is empty".into()));
    }
    if let Some((i, j)) = find(&w, |v| !v.is_finite() || v < 0.0) {
        return Err(violation(
            DOUBLY_STOCHASTIC,
            format!("entry ({i},{j}) = {} is negative or non-finite", w[(i, j)]),
        ));
    }
    for i in 0..n {
        let s = w.row(i).sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(violation(
                DOUBLY_STOCHASTIC,
                format!("row {i} sums to {s}, not 1"),
            ));
        }
    }
    for j in 0..n {
        let s = w.column(j).sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(violation(
                DOUBLY_STOCHASTIC,
                format!("column {j} sums to {s}, not 1"),
            ));
        }
    }
    for i in 0..n {
        if w[(i, i)] <= 0.0 {
            return Err(violation(
                DOUBLY_STOCHASTIC,
                format!("self weight w_{i}{i} must be positive"),
            ));
        }
    }
    if let Some(edges) = edges {
        let mut expected = DMatrix::<bool>::from_element(n, n, false);
        for &(from, to) in edges {
            if from >= n || to >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({from},{to}) references a node outside 0..{n}"
                )));
            }
            expected[(to, from)] = true;
        }
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                if expected[(i, j)] != (w[(i, j)] > 0.0) {
                    return Err(violation(
                        DOUBLY_STOCHASTIC,
                        format!(
                            "w_{i}{j} = {} disagrees with the edge list (edge {j}->{i} {})",
                            w[(i, j)],
                            if expected[(i, j)] {
                                "present"
                            } else {
                                "absent"
                            }
                        ),
                    ));
                }
            }
        }
    }

    let in_neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| w[(i, j)] > 0.0).collect())
        .collect();
    let mut out_neighbors = vec![Vec::new(); n];
    for (i, nbrs) in in_neighbors.iter().enumerate() {
        for &j in nbrs.iter().filter(|&&j| j != i) {
            out_neighbors[j].push(i);
        }
    }
    // Forward reachability from 0 over out-edges, backward over in-edges.
    if let Some(node) = unreachable_node(&out_neighbors).or_else(|| unreachable_node(&in_neighbors))
    {
        return Err(violation(
            STRONG_CONNECTIVITY,
            format!("node {node} is not mutually reachable from node 0"),
        ));
    }
    Ok(MixingMatrix {
        w,
        in_neighbors,
        out_neighbors,
    })
}

fn violation(assumption: &'static str, detail: String) -> Error {
    Error::Assumption { assumption, detail }
}

fn find(w: &DMatrix<f64>, pred: impl Fn(f64) -> bool) -> Option<(usize, usize)> {
    (0..w.nrows())
        .flat_map(|i| (0..w.ncols()).map(move |j| (i, j)))
        .find(|&(i, j)| pred(w[(i, j)]))
}

fn unreachable_node(adj: &[Vec<usize>]) -> Option<usize> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.iter().position(|s| !s)
}

/// Spectral radius of `W − (1/N)𝟏𝟏ᵀ`, the linear consensus rate.
///
/// Computed from the real Schur form, since a directed `W` can have a complex
/// conjugate pair as its dominant deflated eigenvalue.
pub fn consensus_spectral_radius(w: &MixingMatrix) -> f64 {
    let n = w.len();
    let deflated = w.weights() - DMatrix::from_element(n, n, 1.0 / n as f64);
    deflated
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Named undirected topologies plus explicit edge lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Topology {
    Complete,
    Ring,
    Path,
    Star,
    ErdosRenyi {
        p: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Undirected edge list; Metropolis weights are applied.
    Edges {
        edges: Vec<(usize, usize)>,
    },
    /// Fully specified weight matrix, row-major, validated as given.
    Matrix {
        weights: Vec<Vec<f64>>,
    },
}

impl Topology {
    /// Builds the mixing matrix for `n` agents. `fallback_seed` drives random
    /// topologies that carry no seed of their own.
    pub fn build(&self, n: usize, fallback_seed: u64) -> Result<MixingMatrix> {
        if n == 1 {
            return match self {
                Topology::Matrix { weights } => validate(matrix_from_rows(weights)?, None),
                _ => validate(DMatrix::from_element(1, 1, 1.0), None),
            };
        }
        match self {
            Topology::Complete => metropolis_weights(&complete_edges(n), n),
            Topology::Ring => metropolis_weights(&ring_edges(n), n),
            Topology::Path => metropolis_weights(&path_edges(n), n),
            Topology::Star => metropolis_weights(&star_edges(n), n),
            Topology::ErdosRenyi { p, seed } => {
                let mut rng = crate::rng::stream(
                    seed.unwrap_or(fallback_seed),
                    crate::rng::Domain::Topology,
                    0,
                );
                metropolis_weights(&erdos_renyi_edges(n, *p, &mut rng)?, n)
            }
            Topology::Edges { edges } => metropolis_weights(edges, n),
            Topology::Matrix { weights } => {
                let w = matrix_from_rows(weights)?;
                if w.nrows() != n {
                    return Err(Error::dim(n, w.nrows()));
                }
                validate(w, None)
            }
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParameter(
            "weight matrix rows must all have length N".into(),
        ));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn complete_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect()
}

pub fn ring_edges(n: usize) -> Vec<(usize, usize)> {
    match n {
        0 | 1 => vec![],
        2 => vec![(0, 1)],
        _ => (0..n).map(|a| (a, (a + 1) % n)).collect(),
    }
}

pub fn path_edges(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|b| (b - 1, b)).collect()
}

pub fn star_edges(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|b| (0, b)).collect()
}

const ER_MAX_ATTEMPTS: usize = 10_000;

/// G(n, p) conditioned on connectivity by rejection.
pub fn erdos_renyi_edges<R: Rng>(n: usize, p: f64, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    if !(0.0..=1.0).contains(&p) || p == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "edge probability {p} not in (0, 1]"
        )));
    }
    for _ in 0..ER_MAX_ATTEMPTS {
        let edges: Vec<(usize, usize)> = complete_edges(n)
            .into_iter()
            .filter(|_| rng.random::<f64>() < p)
            .collect();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        if unreachable_node(&adj).is_none() {
            return Ok(edges);
        }
    }
    Err(violation(
        STRONG_CONNECTIVITY,
        format!("no connected G({n}, {p}) sample in {ER_MAX_ATTEMPTS} attempts"),
    ))
}

/// Directed ring where each node keeps `self_weight` and takes the rest from
/// its predecessor. Balanced, hence doubly stochastic.
pub fn directed_ring(n: usize, self_weight: f64) -> Result<MixingMatrix> {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, i)] = self_weight;
        w[(i, (i + n - 1) % n)] += 1.0 - self_weight;
    }
    validate(w, None)
}
