//! Moving-average embedding store, exact KNN graph and its normalized Laplacian.
//!
//! The graph is built from the smoothed embeddings `z̄` by linking each point
//! to its `k` most cosine-similar points and then OR-symmetrizing, so
//! `A_ij = 1` iff `j ∈ N^k(i)` or `i ∈ N^k(j)`. Self is never its own
//! neighbor and similarity ties go to the lower index.
//!
//! The Laplacian `L = I − D^{-1/2} A D^{-1/2}` is never stored densely:
//! [`Laplacian::entry`] evaluates it from adjacency and degrees on demand.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::types::{l2_normalize, UnitVector};

/// Smoothed per-sample representation features.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<T> {
    zbar: Vec<UnitVector<T>>,
    dim: usize,
    epoch: usize,
    alpha: T,
}

impl<T: Scalar> EmbeddingStore<T> {
    /// Seeds the store with the epoch-0 features (`z̄⁰ = z⁰`).
    pub fn new(initial: Vec<UnitVector<T>>, alpha: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(Error::InvalidSpec(format!("alpha {alpha} outside (0, 1]")));
        }
        let dim = initial
            .first()
            .map(|z| z.dim())
            .ok_or_else(|| Error::shape("embedding store needs at least one sample"))?;
        if let Some(bad) = initial.iter().position(|z| z.dim() != dim) {
            return Err(Error::shape(format!(
                "embedding {bad} has dim {}, expected {dim}",
                initial[bad].dim()
            )));
        }
        Ok(Self {
            zbar: initial,
            dim,
            epoch: 0,
            alpha,
        })
    }

    /// `z̄ ← normalize((1 − α) z̄ + α z)` for every row, then advances the epoch.
    ///
    /// On error the store is left untouched.
    pub fn update(&mut self, z: &[UnitVector<T>]) -> Result<()> {
        if z.len() != self.zbar.len() {
            return Err(Error::shape(format!(
                "expected {} embeddings, got {}",
                self.zbar.len(),
                z.len()
            )));
        }
        let keep = T::one() - self.alpha;
        let mut next = Vec::with_capacity(z.len());
        for (prev, cur) in self.zbar.iter().zip(z) {
            if cur.dim() != self.dim {
                return Err(Error::shape(format!(
                    "embedding has dim {}, expected {}",
                    cur.dim(),
                    self.dim
                )));
            }
            let mixed: Vec<T> = prev
                .iter()
                .zip(cur.iter())
                .map(|(&p, &c)| keep * p + self.alpha * c)
                .collect();
            next.push(l2_normalize(&mixed)?);
        }
        self.zbar = next;
        self.epoch += 1;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.zbar.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn rows(&self) -> &[UnitVector<T>] {
        &self.zbar
    }
}

/// Neighbor search strategy. Both produce identical neighbor lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KnnMethod {
    /// Score every candidate and fully sort.
    #[default]
    BruteForce,
    /// Keep a bounded heap of the current best `k` candidates.
    Heap,
}

/// Symmetric, loop-free KNN graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    k: usize,
    adjacency: Vec<Vec<usize>>,
}

impl KnnGraph {
    /// Builds a graph from an explicit undirected edge list.
    pub fn from_edges(n: usize, k: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidSpec(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidSpec(format!("self loop on node {i}")));
            }
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { k, adjacency })
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    /// Sorted neighbor list of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    /// Undirected edges `(i, j)` with `i < j`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    /// Writes the `n k` header followed by one `i j` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.n(), self.k)?;
        for (i, j) in self.edges() {
            writeln!(out, "{i} {j}")?;
        }
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let parse_pair = |line_no: usize, line: &str| -> Result<(usize, usize)> {
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
                _ => Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected two integers, found {line:?}"),
                }),
            }
        };
        let (n, k) = match lines.next() {
            Some((_, Ok(header))) => parse_pair(1, &header)?,
            Some((_, Err(e))) => {
                return Err(Error::Parse {
                    line: 1,
                    msg: e.to_string(),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "missing header".into(),
                })
            }
        };
        let mut edges = Vec::new();
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::Parse {
                line: idx + 1,
                msg: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            edges.push(parse_pair(idx + 1, &line)?);
        }
        Self::from_edges(n, k, &edges)
    }
}

/// Candidate neighbor ordered so that the heap top is the *worst* kept one:
/// lower similarity is worse, and on equal similarity the higher index is worse.
#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    sim: T,
    index: usize,
}

impl<T: Scalar> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Candidate<T> {}

impl<T: Scalar> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Candidate<T> {
    // Greater = worse.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .sim
            .partial_cmp(&self.sim)
            .unwrap_or(Ordering::Equal)
            .then(self.index.cmp(&other.index))
    }
}

/// Indices of the `k` rows most similar to row `query`, best first.
fn nearest<T: Scalar>(
    rows: &[UnitVector<T>],
    query: usize,
    k: usize,
    method: KnnMethod,
) -> Vec<usize> {
    let q = &rows[query];
    let candidates = rows
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != query)
        .map(|(j, r)| Candidate {
            sim: dot(q, r),
            index: j,
        });
    let mut kept: Vec<Candidate<T>> = match method {
        KnnMethod::BruteForce => {
            let mut all: Vec<_> = candidates.collect();
            all.sort();
            all.truncate(k);
            all
        }
        KnnMethod::Heap => {
            let mut heap = BinaryHeap::with_capacity(k + 1);
            for c in candidates {
                if heap.len() < k {
                    heap.push(c);
                } else if heap.peek().is_some_and(|worst| c < *worst) {
                    heap.pop();
                    heap.push(c);
                }
            }
            heap.into_vec()
        }
    };
    kept.sort();
    kept.into_iter().map(|c| c.index).collect()
}

/// Exact KNN graph over the store's smoothed embeddings, OR-symmetrized.
pub fn build_knn_graph<T: Scalar>(store: &EmbeddingStore<T>, k: usize) -> Result<KnnGraph> {
    build_knn_graph_with(store.rows(), k, KnnMethod::BruteForce)
}

pub fn build_knn_graph_with<T: Scalar>(
    rows: &[UnitVector<T>],
    k: usize,
    method: KnnMethod,
) -> Result<KnnGraph> {
    let n = rows.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    let mut edges = Vec::with_capacity(n * k);
    for i in 0..n {
        for j in nearest(rows, i, k, method) {
            edges.push((i, j));
        }
    }
    KnnGraph::from_edges(n, k, &edges)
}

/// First graph of a run, built from the epoch-0 embeddings.
pub fn init_graph<T: Scalar>(store: &EmbeddingStore<T>, k: usize) -> Result<KnnGraph> {
    build_knn_graph(store, k)
}

/// Entry-wise view of `L = I − D^{-1/2} A D^{-1/2}`.
#[derive(Debug, Clone, Copy)]
pub struct Laplacian<'g> {
    graph: &'g KnnGraph,
}

impl<'g> Laplacian<'g> {
    pub fn new(graph: &'g KnnGraph) -> Result<Self> {
        if let Some(i) = (0..graph.n()).find(|&i| graph.degree(i) == 0) {
            return Err(Error::IsolatedNode(i));
        }
        Ok(Self { graph })
    }

    pub fn graph(&self) -> &'g KnnGraph {
        self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Positive-pair weight `−L_ij = 1/√(d_i d_j)` for an edge, `0` otherwise.
    pub fn edge_weight<T: Scalar>(&self, i: usize, j: usize) -> T {
        if i != j && self.graph.is_edge(i, j) {
            let di = T::from_usize(self.graph.degree(i)).unwrap();
            let dj = T::from_usize(self.graph.degree(j)).unwrap();
            T::one() / (di * dj).sqrt()
        } else {
            T::zero()
        }
    }

    pub fn entry<T: Scalar>(&self, i: usize, j: usize) -> T {
        if i == j {
            T::one()
        } else {
            -self.edge_weight::<T>(i, j)
        }
    }
}

pub fn laplacian(graph: &KnnGraph) -> Result<Laplacian<'_>> {
    Laplacian::new(graph)
}

/// Uniformly chosen neighbor of node `i`.
pub fn random_neighbor<R: Rng + ?Sized>(graph: &KnnGraph, i: usize, rng: &mut R) -> Result<usize> {
    let nb = graph.neighbors(i);
    if nb.is_empty() {
        return Err(Error::IsolatedNode(i));
    }
    Ok(nb[rng.random_range(0..nb.len())])
}
