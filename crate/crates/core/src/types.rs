//! Canonical containers shared by the graph, loss, model and trainer modules.
//!
//! Plain feature vectors travel as `Vec<T>` / `&[T]`. The two constrained
//! carriers are [`UnitVector`] (unit L2 norm) and [`ProbVector`] (a point on
//! the probability simplex); both can only be built through checked
//! constructors, so holding one is proof of its invariant.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Vectors with `‖v‖₂` at or below this are treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Cluster labels, one per sample, each in `[0, K)`.
pub type LabelVector = Vec<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector<T>(Vec<T>);

impl<T: Scalar> UnitVector<T> {
    /// Wraps `values` after checking that they already have unit norm.
    pub fn new(values: Vec<T>) -> Result<Self> {
        let norm = dot_self(&values).sqrt();
        if !norm.is_finite() || (norm - T::one()).abs() > T::invariant_tol() {
            return Err(Error::InvalidSpec(format!("vector norm {norm} is not 1")));
        }
        Ok(UnitVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> AsRef<[T]> for UnitVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

impl<T> Deref for UnitVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

fn dot_self<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x)
}

/// Scales `v` to unit Euclidean length.
pub fn l2_normalize<T: Scalar>(v: &[T]) -> Result<UnitVector<T>> {
    let norm = dot_self(v).sqrt();
    if !norm.is_finite() || norm <= T::lit(ZERO_NORM_EPS) {
        return Err(Error::ZeroVector);
    }
    Ok(UnitVector(v.iter().map(|&x| x / norm).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<T>(Vec<T>);

impl<T: Scalar> ProbVector<T> {
    /// Wraps `values` after checking they lie on the probability simplex.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSpec("empty probability vector".into()));
        }
        let mut sum = T::zero();
        for &p in &values {
            if !(p >= T::zero() && p <= T::one()) {
                return Err(Error::InvalidSpec(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
            sum = sum + p;
        }
        if (sum - T::one()).abs() > T::invariant_tol() {
            return Err(Error::InvalidSpec(format!("probabilities sum to {sum}")));
        }
        Ok(ProbVector(values))
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

impl<T> AsRef<[T]> for ProbVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

impl<T> Deref for ProbVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &[T]) -> ProbVector<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |m, v| if v > m { v } else { m });
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    ProbVector(exps.into_iter().map(|e| e / total).collect())
}

/// Hard cluster label: the smallest index attaining the maximum probability.
pub fn assign_cluster<T: Scalar>(p: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = j;
        }
    }
    best
}

/// `N × K` row-stochastic matrix of cluster probabilities, stored row-major.
///
/// Row `n` is the assignment distribution of sample `n`; column `j` is the
/// vector of every sample's mass on cluster `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix<T> {
    k: usize,
    data: Vec<T>,
}

impl<T: Scalar> AssignmentMatrix<T> {
    pub fn from_rows(rows: &[ProbVector<T>]) -> Result<Self> {
        let k = rows
            .first()
            .map(|r| r.k())
            .ok_or_else(|| Error::shape("assignment matrix needs at least one row"))?;
        let mut data = Vec::with_capacity(rows.len() * k);
        for row in rows {
            if row.k() != k {
                return Err(Error::shape(format!(
                    "row has {} clusters, expected {k}",
                    row.k()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { k, data })
    }

    /// Builds from raw rows, validating each one as a probability vector.
    pub fn from_raw_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(ProbVector::new)
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, n: usize) -> &[T] {
        &self.data[n * self.k..(n + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.k)
    }

    pub fn get(&self, n: usize, j: usize) -> T {
        self.data[n * self.k + j]
    }

    /// Column view: every sample's probability for cluster `j`.
    pub fn column(&self, j: usize) -> Vec<T> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn labels(&self) -> LabelVector {
        self.rows().map(assign_cluster).collect()
    }
}
