//! Agent communication graphs and static base combination matrices.
//!
//! A `Topology` is an undirected connected graph over `K` agents. Every agent
//! is implicitly a member of its own neighborhood, so the degree `n_k`
//! counts the self-loop: an agent with two graph neighbors has `n_k = 3`.
//! This convention is what makes the Metropolis weights below reproduce the
//! reference mixing rates (0.949 on the 16-ring, 0.600 on the 4-cube).
//!
//! `BaseWeights` holds the static nonnegative matrix `C = [c_lk]` whose
//! column `k` gives the weights agent `k` applies to its neighbors. Columns
//! sum to one and the sparsity pattern matches the graph exactly, diagonal
//! included, so `C` is primitive whenever the graph is connected.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

const TAG_TOPOLOGY: u64 = 0x544f_504f;

/// Undirected connected communication graph with implicit self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    num_agents: usize,
    /// Normalized unordered pairs `(u, v)` with `u < v`.
    edges: BTreeSet<(usize, usize)>,
}

impl Topology {
    fn new(num_agents: usize, edges: BTreeSet<(usize, usize)>) -> Self {
        debug_assert!(edges.iter().all(|&(u, v)| u < v && v < num_agents));
        Self { num_agents, edges }
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_edge(&self, u: usize, v: usize) -> bool {
        u == v || self.edges.contains(&(u.min(v), u.max(v)))
    }

    /// Neighborhood of `k` including `k` itself, ascending.
    pub fn neighborhood(&self, k: usize) -> Vec<usize> {
        let mut n: Vec<usize> = (0..self.num_agents)
            .filter(|&l| self.contains_edge(l, k))
            .collect();
        debug_assert!(n.contains(&k));
        n.sort_unstable();
        n
    }

    /// Degree `n_k`, counting the self-loop.
    pub fn degree(&self, k: usize) -> usize {
        (0..self.num_agents).filter(|&l| self.contains_edge(l, k)).count()
    }

    pub fn is_connected(&self) -> bool {
        if self.num_agents == 0 {
            return false;
        }
        let mut seen = vec![false; self.num_agents];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(a, b) in &self.edges {
                let w = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.num_agents
    }

    /// Plain-text edge list: a `K` header line, then one `u v` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.num_agents);
        for (u, v) in &self.edges {
            let _ = writeln!(s, "{u} {v}");
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let k: usize = lines
            .next()
            .ok_or_else(|| Error::Parse("empty edge list".into()))?
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad agent count: {e}")))?;
        if k < 2 {
            return Err(Error::InvalidParameter(format!(
                "edge list declares {k} agents, need at least 2"
            )));
        }
        let mut edges = BTreeSet::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let (u, v) = match (it.next(), it.next(), it.next()) {
                (Some(u), Some(v), None) => (u, v),
                _ => return Err(Error::Parse(format!("bad edge line: {line:?}"))),
            };
            let u: usize = u.parse().map_err(|e| Error::Parse(format!("bad endpoint: {e}")))?;
            let v: usize = v.parse().map_err(|e| Error::Parse(format!("bad endpoint: {e}")))?;
            if u == v {
                return Err(Error::Parse(format!("explicit self-loop {u} {v} (self-loops are implicit)")));
            }
            if u >= k || v >= k {
                return Err(Error::Parse(format!("edge {u} {v} out of range for K={k}")));
            }
            edges.insert((u.min(v), u.max(v)));
        }
        Ok(Self::new(k, edges))
    }
}

/// Ring over `k` agents: each agent has exactly two distinct neighbors.
pub fn build_ring(k: usize) -> Result<Topology> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("ring needs K >= 2, got {k}")));
    }
    let mut edges = BTreeSet::new();
    for i in 0..k {
        let j = (i + 1) % k;
        edges.insert((i.min(j), i.max(j)));
    }
    Ok(Topology::new(k, edges))
}

/// Hypercube over `2^dim` agents: adjacent iff binary labels differ in one bit.
pub fn build_hypercube(dim: u32) -> Result<Topology> {
    if dim < 1 {
        return Err(Error::InvalidParameter("hypercube needs dim >= 1".into()));
    }
    if dim > 16 {
        return Err(Error::InvalidParameter(format!("hypercube dim {dim} too large")));
    }
    let k = 1usize << dim;
    let mut edges = BTreeSet::new();
    for u in 0..k {
        for b in 0..dim {
            let v = u ^ (1usize << b);
            edges.insert((u.min(v), u.max(v)));
        }
    }
    Ok(Topology::new(k, edges))
}

/// Erdos-Renyi graph: each unordered pair included independently with
/// probability `p`. Disconnected draws are resampled with an incremented
/// seed so the result always satisfies the connectivity requirement;
/// the retry budget is 1000 attempts.
pub fn build_erdos_renyi(k: usize, p: f64, seed: u64) -> Result<Topology> {
    build_erdos_renyi_with_retries(k, p, seed, 1000)
}

pub fn build_erdos_renyi_with_retries(
    k: usize,
    p: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<Topology> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("graph needs K >= 2, got {k}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("edge probability must be in (0, 1], got {p}")));
    }
    for attempt in 0..max_attempts {
        let mut gen = rng::stream(seed.wrapping_add(attempt as u64), &[TAG_TOPOLOGY]);
        let mut edges = BTreeSet::new();
        for u in 0..k {
            for v in (u + 1)..k {
                if gen.gen::<f64>() < p {
                    edges.insert((u, v));
                }
            }
        }
        let t = Topology::new(k, edges);
        if t.is_connected() {
            return Ok(t);
        }
    }
    Err(Error::Disconnected {
        num_agents: k,
        edge_prob: p,
        attempts: max_attempts,
    })
}

// ---------------------------------------------------------------------------
// Base combination matrices
// ---------------------------------------------------------------------------

/// Static nonnegative combination matrix compatible with a topology.
///
/// Entry `(l, k)` is `c_lk`, the weight agent `k` applies to agent `l`.
/// Every column sums to one; `c_lk > 0` exactly when `l` is in `k`'s
/// neighborhood (so the diagonal is strictly positive).
#[derive(Debug, Clone, PartialEq)]
pub struct BaseWeights {
    matrix: Array2<f64>,
}

impl BaseWeights {
    /// Wrap an explicit nonnegative square matrix as base weights.
    pub fn from_matrix(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.nrows() != matrix.ncols() {
            return Err(Error::ContractViolation(format!(
                "base matrix must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::ContractViolation(
                "base matrix entries must be nonnegative".into(),
            ));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn num_agents(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, l: usize, k: usize) -> f64 {
        self.matrix[[l, k]]
    }
}

/// Metropolis rule: off-diagonal `1/max(n_k, n_l)` for graph neighbors,
/// diagonal absorbing the column deficit. Symmetric and doubly stochastic.
pub fn metropolis_weights(t: &Topology) -> BaseWeights {
    let k = t.num_agents();
    let deg: Vec<usize> = (0..k).map(|i| t.degree(i)).collect();
    let mut m = Array2::<f64>::zeros((k, k));
    for col in 0..k {
        let mut off_sum = 0.0;
        for row in 0..k {
            if row != col && t.contains_edge(row, col) {
                let w = 1.0 / deg[row].max(deg[col]) as f64;
                m[[row, col]] = w;
                off_sum += w;
            }
        }
        m[[col, col]] = 1.0 - off_sum;
    }
    BaseWeights { matrix: m }
}

/// Second-largest eigenvalue magnitude of a symmetric doubly stochastic
/// matrix, via power iteration on the mean-deflated operator.
///
/// The iterate is kept orthogonal to the all-ones dominant eigenvector, so
/// the growth factor of the iteration converges to the magnitude of the
/// second eigenvalue even when a `+lambda/-lambda` pair shares it.
pub fn mixing_rate(w: &BaseWeights) -> Result<f64> {
    let a = &w.matrix;
    let k = a.nrows();
    if a.ncols() != k {
        return Err(Error::ContractViolation("mixing_rate needs a square matrix".into()));
    }
    for i in 0..k {
        for j in (i + 1)..k {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-12 {
                return Err(Error::ContractViolation(format!(
                    "mixing_rate needs a symmetric matrix; entries ({i},{j}) differ"
                )));
            }
        }
    }
    if k == 1 {
        return Ok(0.0);
    }

    let mut gen = rng::stream(0x6d69_7872, &[k as u64]);
    let mut v: Vec<f64> = (0..k).map(|_| gen.gen::<f64>() - 0.5).collect();
    center(&mut v);
    normalize(&mut v).ok_or_else(|| Error::NumericalFailure("degenerate start vector".into()))?;

    const TOL: f64 = 1e-9;
    const MAX_ITERS: usize = 100_000;
    let mut prev_est = f64::INFINITY;
    let mut last_change = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let mut av = vec![0.0; k];
        for (i, av_i) in av.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..k {
                acc += a[[i, j]] * v[j];
            }
            *av_i = acc;
        }
        center(&mut av);
        let norm = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-14 {
            // The deflated operator annihilates the iterate: no second mode.
            return Ok(0.0);
        }
        let est = norm;
        for x in &mut av {
            *x /= norm;
        }
        v = av;
        last_change = (est - prev_est).abs();
        if last_change < TOL {
            return Ok(est);
        }
        prev_est = est;
    }
    Err(Error::NumericalFailure(format!(
        "power iteration did not converge; last residual {last_change:.3e}"
    )))
}

fn center(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v {
        *x -= mean;
    }
}

fn normalize(v: &mut [f64]) -> Option<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-300 {
        return None;
    }
    for x in v {
        *x /= norm;
    }
    Some(())
}

/// Complete graph, used by tests and as the `p = 1` Erdos-Renyi limit.
pub fn build_complete(k: usize) -> Result<Topology> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("graph needs K >= 2, got {k}")));
    }
    let mut edges = BTreeSet::new();
    for u in 0..k {
        for v in (u + 1)..k {
            edges.insert((u, v));
        }
    }
    Ok(Topology::new(k, edges))
}
