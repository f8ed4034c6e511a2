//! Network graphs and symmetric doubly stochastic combination matrices.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row/column sums and symmetry of a combination matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Eigenvalue tolerance used for primitivity, PSD and "nonzero" decisions.
pub const EIG_TOL: f64 = 1e-10;
/// Attempts made by [`build_erdos_renyi`] before giving up on connectivity.
pub const ER_MAX_ATTEMPTS: u64 = 100;

/// Undirected simple graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adjacency: Vec<bool>,
    label: String,
}

impl Graph {
    /// Builds a graph from an edge list. Rejects self-loops, out-of-range
    /// endpoints, fewer than two nodes and disconnected graphs.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], label: impl Into<String>) -> Result<Self> {
        let g = Self::from_edges_unchecked(n, edges, label)?;
        if !g.is_connected() {
            return Err(Error::InvalidTopology(format!("graph '{}' is disconnected", g.label)));
        }
        Ok(g)
    }

    fn from_edges_unchecked(n: usize, edges: &[(usize, usize)], label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if n < 2 {
            return Err(Error::InvalidTopology(format!("'{label}' needs at least 2 nodes, got {n}")));
        }
        let mut adjacency = vec![false; n * n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidTopology(format!("edge ({i}, {j}) out of range for n = {n}")));
            }
            if i == j {
                return Err(Error::InvalidTopology(format!("self-loop at node {i}")));
            }
            adjacency[i * n + j] = true;
            adjacency[j * n + i] = true;
        }
        Ok(Self { n, adjacency, label })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i * self.n..(i + 1) * self.n].iter().filter(|&&a| a).count()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.has_edge(i, j))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a).count() / 2
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Cycle graph on `n ≥ 3` nodes.
pub fn build_ring(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(Error::InvalidTopology(format!("ring needs n >= 3, got {n}")));
    }
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Graph::from_edges(n, &edges, format!("ring:{n}"))
}

/// Two-dimensional 4-neighbour lattice without wraparound.
pub fn build_grid(rows: usize, cols: usize) -> Result<Graph> {
    if rows * cols < 4 {
        return Err(Error::InvalidTopology(format!(
            "grid needs rows*cols >= 4, got {rows}x{cols}"
        )));
    }
    let idx = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((idx(r, c), idx(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((idx(r, c), idx(r + 1, c)));
            }
        }
    }
    Graph::from_edges(rows * cols, &edges, format!("grid:{rows}x{cols}"))
}

/// Complete graph on `n ≥ 2` nodes.
pub fn build_complete(n: usize) -> Result<Graph> {
    let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    Graph::from_edges(n, &edges, format!("complete:{n}"))
}

/// Star graph with node 0 as the hub.
pub fn build_star(n: usize) -> Result<Graph> {
    let edges: Vec<_> = (1..n).map(|j| (0, j)).collect();
    Graph::from_edges(n, &edges, format!("star:{n}"))
}

/// Erdős–Rényi graph: each edge present independently with probability `p`.
///
/// Attempt `t` draws from a generator seeded with `seed + t`; the first
/// connected draw is returned.
pub fn build_erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::InvalidParameter(format!("edge probability {p} outside [0, 1]")));
    }
    let label = format!("er:{n}:{p}:{seed}");
    for attempt in 0..ER_MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::from_edges_unchecked(n, &edges, label.clone())?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::TopologyGeneration(format!(
        "{label}: no connected draw in {ER_MAX_ATTEMPTS} attempts"
    )))
}

/// Symmetric doubly stochastic primitive matrix with its cached spectrum.
#[derive(Debug, Clone)]
pub struct CombinationMatrix {
    w: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    mixing_rate: f64,
    label: String,
}

impl CombinationMatrix {
    /// Validates `w` and caches its eigendecomposition.
    ///
    /// Eigenvalues are sorted in decreasing order. The first eigenvector is
    /// set to exactly `1/√n`, and the remaining ones are re-orthogonalized
    /// against it.
    pub fn new(w: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        let n = w.nrows();
        if n < 2 || w.ncols() != n {
            return Err(Error::InvalidInput(format!("combination matrix must be square with n >= 2, got {}x{}", w.nrows(), w.ncols())));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("combination matrix has non-finite entries".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if (w[(i, j)] - w[(j, i)]).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidInput(format!("'{label}' is not symmetric at ({i}, {j})")));
                }
            }
            let row: f64 = w.row(i).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidInput(format!("'{label}' row {i} sums to {row}")));
            }
        }
        let (eigenvalues, eigenvectors) = sorted_eigen(&w);
        let at_one = eigenvalues.iter().filter(|&&l| (l - 1.0).abs() <= EIG_TOL).count();
        if at_one != 1 {
            return Err(Error::NotPrimitive(format!(
                "'{label}' has {at_one} eigenvalues equal to 1"
            )));
        }
        let mixing_rate = rate_from_sorted(&eigenvalues)?;
        let eigenvectors = fix_principal(eigenvectors);
        Ok(Self { w, eigenvalues, eigenvectors, mixing_rate, label })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Eigenvalues `1 = λ_1 ≥ λ_2 ≥ … ≥ λ_n`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthogonal eigenvector matrix; column `i` pairs with `eigenvalues()[i]`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Eigenvectors orthogonal to the consensus direction (columns 2..n).
    pub fn u_hat(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(1, self.n() - 1).into_owned()
    }

    /// `max_{i≥2} |λ_i|`.
    pub fn mixing_rate(&self) -> f64 {
        self.mixing_rate
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().expect("n >= 2")
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue() >= -EIG_TOL
    }

    /// Smallest eigenvalue strictly above the tolerance; `None` when the
    /// matrix is not PSD.
    pub fn min_nonzero_eig(&self) -> Option<f64> {
        if !self.is_psd() {
            return None;
        }
        self.eigenvalues.iter().rev().copied().find(|&l| l > EIG_TOL)
    }

    /// Smallest lazy-shift weight making this matrix PSD.
    pub fn psd_threshold(&self) -> f64 {
        let ln = self.min_eigenvalue();
        ln.min(0.0).abs() / (1.0 - ln)
    }
}

fn sorted_eigen(w: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(w.clone());
    let n = w.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn fix_principal(mut u: DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    let one = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    u.set_column(0, &one);
    for c in 1..n {
        let mut v = u.column(c).into_owned();
        for p in 0..c {
            let q = u.column(p);
            let proj = q.dot(&v);
            v.axpy(-proj, &q, 1.0);
        }
        let norm = v.norm();
        u.set_column(c, &(v / norm));
    }
    u
}

fn rate_from_sorted(eigenvalues: &[f64]) -> Result<f64> {
    let rate = eigenvalues[1..].iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    if rate >= 1.0 - 1e-12 {
        return Err(Error::NotPrimitive(format!("mixing rate {rate} is not below 1")));
    }
    Ok(rate)
}

/// `ρ(W − 𝟙𝟙ᵀ/n)` for a symmetric matrix, assuming `W𝟙 = 𝟙`.
pub fn mixing_rate(w: &DMatrix<f64>) -> Result<f64> {
    let n = w.nrows();
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    let eig = SymmetricEigen::new(w - j);
    let rate = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    if rate >= 1.0 - 1e-12 {
        return Err(Error::NotPrimitive(format!("mixing rate {rate} is not below 1")));
    }
    Ok(rate)
}

/// Metropolis–Hastings weights `w_ij = 1/(1 + max(deg_i, deg_j))`.
pub fn metropolis_weights(g: &Graph) -> Result<CombinationMatrix> {
    let n = g.n();
    let deg: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in g.neighbors(i) {
            w[(i, j)] = 1.0 / (1 + deg[i].max(deg[j])) as f64;
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    CombinationMatrix::new(w, g.label())
}

/// `(1 − θ)W + θI`.
pub fn lazy_shift(w: &CombinationMatrix, theta: f64) -> Result<CombinationMatrix> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter(format!("lazy weight {theta} outside (0, 1]")));
    }
    let n = w.n();
    let shifted = w.matrix() * (1.0 - theta) + DMatrix::identity(n, n) * theta;
    CombinationMatrix::new(shifted, format!("{}+lazy:{theta}", w.label()))
}

/// Graph family of a [`TopologySpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseTopology {
    Ring { n: usize },
    Grid { rows: usize, cols: usize },
    ErdosRenyi { n: usize, p: f64, seed: u64 },
    Complete { n: usize },
}

/// Parsed topology string such as `ring:32`, `grid:6x6`, `er:32:0.8:7`,
/// `complete:4`, optionally followed by `+lazy:<θ>`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySpec {
    pub base: BaseTopology,
    pub lazy: Option<f64>,
}

impl TopologySpec {
    pub fn n(&self) -> usize {
        match self.base {
            BaseTopology::Ring { n } | BaseTopology::Complete { n } | BaseTopology::ErdosRenyi { n, .. } => n,
            BaseTopology::Grid { rows, cols } => rows * cols,
        }
    }

    pub fn graph(&self) -> Result<Graph> {
        match self.base {
            BaseTopology::Ring { n } => build_ring(n),
            BaseTopology::Grid { rows, cols } => build_grid(rows, cols),
            BaseTopology::ErdosRenyi { n, p, seed } => build_erdos_renyi(n, p, seed),
            BaseTopology::Complete { n } => build_complete(n),
        }
    }

    /// Metropolis matrix of the graph, lazy-shifted when requested.
    pub fn build(&self) -> Result<CombinationMatrix> {
        let w = metropolis_weights(&self.graph()?)?;
        let w = match self.lazy {
            Some(theta) => lazy_shift(&w, theta)?,
            None => w,
        };
        Ok(CombinationMatrix { label: self.to_string(), ..w })
    }

    /// Spec string with characters unsafe in file names replaced.
    pub fn file_stem(&self) -> String {
        self.to_string().replace([':', '+'], "_")
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.base {
            BaseTopology::Ring { n } => write!(f, "ring:{n}")?,
            BaseTopology::Grid { rows, cols } => write!(f, "grid:{rows}x{cols}")?,
            BaseTopology::ErdosRenyi { n, p, seed } => write!(f, "er:{n}:{p}:{seed}")?,
            BaseTopology::Complete { n } => write!(f, "complete:{n}")?,
        }
        if let Some(theta) = self.lazy {
            write!(f, "+lazy:{theta}")?;
        }
        Ok(())
    }
}

impl FromStr for TopologySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidTopology(format!("'{s}': {why}"));
        let mut parts = s.trim().split('+');
        let base_str = parts.next().unwrap_or_default();
        let fields: Vec<&str> = base_str.split(':').collect();
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad(&format!("'{v}' is not a node count")));
        let base = match fields.as_slice() {
            ["ring", n] => BaseTopology::Ring { n: int(n)? },
            ["complete", n] => BaseTopology::Complete { n: int(n)? },
            ["grid", dims] => {
                let (r, c) = dims.split_once('x').ok_or_else(|| bad("grid expects <rows>x<cols>"))?;
                BaseTopology::Grid { rows: int(r)?, cols: int(c)? }
            }
            ["er", n, p, seed] => BaseTopology::ErdosRenyi {
                n: int(n)?,
                p: p.parse().map_err(|_| bad("edge probability is not a number"))?,
                seed: seed.parse().map_err(|_| bad("seed is not an integer"))?,
            },
            _ => return Err(bad("expected ring:<n>, grid:<r>x<c>, er:<n>:<p>:<seed> or complete:<n>")),
        };
        let mut lazy = None;
        for modifier in parts {
            match modifier.split_once(':') {
                Some(("lazy", theta)) if lazy.is_none() => {
                    lazy = Some(theta.parse().map_err(|_| bad("lazy weight is not a number"))?);
                }
                _ => return Err(bad(&format!("unknown or repeated modifier '{modifier}'"))),
            }
        }
        Ok(Self { base, lazy })
    }
}

impl Serialize for TopologySpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TopologySpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
