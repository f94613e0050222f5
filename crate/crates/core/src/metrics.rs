//! Clustering metrics: ACC under the best one-to-one label matching, NMI, ARI,
//! and top-k nearest-neighbor label agreement of an embedding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Counts of (predicted cluster, true class) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `counts[p][t]`
    pub counts: Vec<Vec<u64>>,
    pub pred_totals: Vec<u64>,
    pub true_totals: Vec<u64>,
    pub n: u64,
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch {
                left: pred.len(),
                right: truth.len(),
            });
        }
        let kp = pred.iter().max().map_or(0, |&m| m + 1);
        let kt = truth.iter().max().map_or(0, |&m| m + 1);
        let mut counts = vec![vec![0u64; kt]; kp];
        for (&p, &t) in pred.iter().zip(truth) {
            counts[p][t] += 1;
        }
        let pred_totals = counts.iter().map(|r| r.iter().sum()).collect();
        let true_totals = (0..kt).map(|t| counts.iter().map(|r| r[t]).sum()).collect();
        Ok(Self {
            counts,
            pred_totals,
            true_totals,
            n: pred.len() as u64,
        })
    }
}

/// Minimum-cost perfect matching on a square cost matrix (Kuhn–Munkres with
/// potentials). Returns `assignment[row] = column`.
pub fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(
        cost.iter().all(|r| r.len() == n),
        "cost matrix must be square"
    );
    const INF: i64 = i64::MAX / 4;
    // 1-based internals; p[j] = row matched to column j, 0 = none.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Fraction of samples correctly labeled under the best injective mapping
/// from predicted clusters to true classes.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    if table.n == 0 {
        return Ok(0.0);
    }
    let size = table.counts.len().max(table.true_totals.len());
    let cost: Vec<Vec<i64>> = (0..size)
        .map(|p| {
            (0..size)
                .map(|t| {
                    -(table
                        .counts
                        .get(p)
                        .and_then(|r| r.get(t))
                        .copied()
                        .unwrap_or(0) as i64)
                })
                .collect()
        })
        .collect();
    let matched: i64 = hungarian(&cost)
        .iter()
        .enumerate()
        .map(|(p, &t)| -cost[p][t])
        .sum();
    Ok(matched as f64 / table.n as f64)
}

fn entropy(totals: &[u64], n: f64) -> f64 {
    -totals
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Normalized mutual information `I(U; V) / √(H(U) H(V))`.
///
/// If either partition has zero entropy the score is `1.0` when both are a
/// single cluster (they are then identical) and `0.0` otherwise.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    if table.n == 0 {
        return Ok(0.0);
    }
    let n = table.n as f64;
    let hp = entropy(&table.pred_totals, n);
    let ht = entropy(&table.true_totals, n);
    if hp == 0.0 || ht == 0.0 {
        return Ok(if hp == 0.0 && ht == 0.0 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (p, row) in table.counts.iter().enumerate() {
        for (t, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi +=
                c / n * (c * n / (table.pred_totals[p] as f64 * table.true_totals[t] as f64)).ln();
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

fn pairs(c: u64) -> f64 {
    (c as f64) * (c.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index.
///
/// When the expected and maximum index coincide the score is `1.0` for
/// identical partitions and `0.0` otherwise.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let index: f64 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_p: f64 = table.pred_totals.iter().map(|&c| pairs(c)).sum();
    let sum_t: f64 = table.true_totals.iter().map(|&c| pairs(c)).sum();
    let total = pairs(table.n);
    let expected = if total > 0.0 {
        sum_p * sum_t / total
    } else {
        0.0
    };
    let max = 0.5 * (sum_p + sum_t);
    let denom = max - expected;
    if denom == 0.0 {
        let identical = index == sum_p && index == sum_t;
        return Ok(if identical { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

/// Mean over anchors of the fraction of their `k` cosine-nearest neighbors
/// (self excluded, ties to the lower index) that share the anchor's label.
pub fn topk_nn_accuracy<T, V>(features: &[V], truth: &[usize], k: usize) -> Result<f64>
where
    T: Scalar,
    V: AsRef<[T]>,
{
    let n = features.len();
    if truth.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: truth.len(),
        });
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidK { k, n });
    }
    let mut total = 0.0;
    let mut sims: Vec<(T, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        sims.clear();
        let fi = features[i].as_ref();
        sims.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (dot(fi, features[j].as_ref()), j)),
        );
        let by_rank = |a: &(T, usize), b: &(T, usize)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        sims.select_nth_unstable_by(k - 1, by_rank);
        let hits = sims[..k]
            .iter()
            .filter(|&&(_, j)| truth[j] == truth[i])
            .count();
        total += hits as f64 / k as f64;
    }
    Ok(total / n as f64)
}

/// Evaluation summary, serialized as `{acc, nmi, ari, topk: {k: value}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub topk: BTreeMap<usize, f64>,
}

impl MetricReport {
    pub fn compute<T, V>(
        features: &[V],
        pred: &[usize],
        truth: &[usize],
        ks: &[usize],
    ) -> Result<Self>
    where
        T: Scalar,
        V: AsRef<[T]>,
    {
        let mut topk = BTreeMap::new();
        for &k in ks {
            if k < features.len() {
                topk.insert(k, topk_nn_accuracy(features, truth, k)?);
            }
        }
        Ok(Self {
            acc: clustering_accuracy(pred, truth)?,
            nmi: nmi(pred, truth)?,
            ari: ari(pred, truth)?,
            topk,
        })
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["acc".to_string(), "nmi".into(), "ari".into()];
        cols.extend(self.topk.keys().map(|k| format!("top{k}nn")));
        cols.join(",")
    }

    /// One CSV record, top-k columns in ascending `k`.
    pub fn csv_record(&self) -> String {
        let mut cols = vec![
            format!("{:?}", self.acc),
            format!("{:?}", self.nmi),
            format!("{:?}", self.ari),
        ];
        cols.extend(self.topk.values().map(|v| format!("{v:?}")));
        cols.join(",")
    }
}
