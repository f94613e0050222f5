//! Graph contrastive losses with analytic gradients.
//!
//! Every loss takes its inputs as plain coordinate slices and returns the
//! gradient with respect to exactly those coordinates. Unit-norm features are
//! expected but not required: differentiating through the normalization is
//! the encoder's job.
//!
//! The ratio loss for anchor `a` is
//!
//! ```text
//! ℓ_a = log Σ_{b ∈ neg(a)} e^{x_a·x_b/τ}  −  log Σ_{b ∈ pos(a)} w_ab e^{x_a·x_b/τ}
//! ```
//!
//! evaluated in log space as a difference of two log-sum-exps.

use crate::error::{Error, Result};
use crate::graph::Laplacian;
use crate::scalar::{dot, log_sum_exp, Scalar};

/// Value plus gradient with respect to one list of input vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub value: T,
    pub grad: Vec<Vec<T>>,
}

/// Value plus gradients with respect to two assignment matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedLossOutput<T> {
    pub value: T,
    pub grad_q: Vec<Vec<T>>,
    pub grad_q_tilde: Vec<Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperatures<T> {
    pub tau_r: T,
    pub tau_a: T,
}

impl<T: Scalar> Temperatures<T> {
    pub fn new(tau_r: T, tau_a: T) -> Result<Self> {
        if !(tau_r > T::zero() && tau_a > T::zero()) {
            return Err(Error::InvalidSpec(format!(
                "temperatures must be positive (tau_r={tau_r}, tau_a={tau_a})"
            )));
        }
        Ok(Self { tau_r, tau_a })
    }
}

/// Weights of the assignment and regularization terms in the total objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub lambda: T,
    pub eta: T,
}

impl<T: Scalar> LossWeights<T> {
    pub fn new(lambda: T, eta: T) -> Result<Self> {
        if !(lambda >= T::zero() && eta >= T::zero()) {
            return Err(Error::InvalidSpec(format!(
                "loss weights must be nonnegative (lambda={lambda}, eta={eta})"
            )));
        }
        Ok(Self { lambda, eta })
    }
}

/// `S(x, y) = exp(x·y / τ)`.
pub fn similarity<T: Scalar>(x: &[T], y: &[T], tau: T) -> T {
    (dot(x, y) / tau).exp()
}

/// Role of the pair `(a, b)` in anchor `a`'s ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pair<T> {
    /// Numerator term with weight `w > 0`.
    Positive(T),
    /// Denominator term.
    Negative,
    /// Enters neither sum (the anchor itself, another view of the same sample).
    Ignored,
}

pub trait PairRelation<T> {
    fn pair(&self, a: usize, b: usize) -> Pair<T>;
}

/// Positions in a batch mapped to graph nodes; weights come from the global
/// Laplacian, so `−L_ij = 1/√(d_i d_j)` uses full-graph degrees.
#[derive(Debug, Clone, Copy)]
pub struct GraphPairs<'a, 'g> {
    pub laplacian: &'a Laplacian<'g>,
    pub nodes: &'a [usize],
}

impl<T: Scalar> PairRelation<T> for GraphPairs<'_, '_> {
    fn pair(&self, a: usize, b: usize) -> Pair<T> {
        let (i, j) = (self.nodes[a], self.nodes[b]);
        if i == j {
            return Pair::Ignored;
        }
        let w: T = self.laplacian.edge_weight(i, j);
        if w > T::zero() {
            Pair::Positive(w)
        } else {
            Pair::Negative
        }
    }
}

/// Instance discrimination: views of the same sample are the only positives.
#[derive(Debug, Clone, Copy)]
pub struct InstancePairs<'a> {
    pub ids: &'a [usize],
}

impl<T: Scalar> PairRelation<T> for InstancePairs<'_> {
    fn pair(&self, a: usize, b: usize) -> Pair<T> {
        if a == b {
            Pair::Ignored
        } else if self.ids[a] == self.ids[b] {
            Pair::Positive(T::one())
        } else {
            Pair::Negative
        }
    }
}

/// What to do with an anchor whose negative set is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyNegatives {
    Fail,
    Skip,
}

/// Mean graph contrastive ratio loss over anchors.
pub fn contrastive_loss<T, V, R>(
    features: &[V],
    relation: &R,
    tau: T,
    empty_negatives: EmptyNegatives,
) -> Result<LossOutput<T>>
where
    T: Scalar,
    V: AsRef<[T]>,
    R: PairRelation<T>,
{
    let n = features.len();
    let dim = features.first().map_or(0, |f| f.as_ref().len());
    if let Some(bad) = features.iter().position(|f| f.as_ref().len() != dim) {
        return Err(Error::shape(format!(
            "feature {bad} has a different dimension"
        )));
    }

    // Pairwise logits x_a·x_b/τ.
    let mut logits = vec![T::zero(); n * n];
    for a in 0..n {
        for b in a + 1..n {
            let s = dot(features[a].as_ref(), features[b].as_ref()) / tau;
            logits[a * n + b] = s;
            logits[b * n + a] = s;
        }
    }

    let mut total = T::zero();
    let mut contributing = 0usize;
    // coeff[a*n+b] = ∂ℓ_a/∂(x_a·x_b), accumulated before the final 1/count.
    let mut coeff = vec![T::zero(); n * n];
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut pos_logits = Vec::new();
    let mut neg_logits = Vec::new();

    for a in 0..n {
        pos.clear();
        neg.clear();
        for b in 0..n {
            if b == a {
                continue;
            }
            match relation.pair(a, b) {
                Pair::Positive(w) => pos.push((b, w.ln())),
                Pair::Negative => neg.push(b),
                Pair::Ignored => {}
            }
        }
        if pos.is_empty() {
            return Err(Error::NoPositives(a));
        }
        if neg.is_empty() {
            match empty_negatives {
                EmptyNegatives::Fail => return Err(Error::NoNegatives(a)),
                EmptyNegatives::Skip => continue,
            }
        }
        pos_logits.clear();
        pos_logits.extend(pos.iter().map(|&(b, log_w)| logits[a * n + b] + log_w));
        neg_logits.clear();
        neg_logits.extend(neg.iter().map(|&b| logits[a * n + b]));
        let lse_pos = log_sum_exp(&pos_logits);
        let lse_neg = log_sum_exp(&neg_logits);
        total = total + (lse_neg - lse_pos);
        contributing += 1;

        for (&(b, _), &l) in pos.iter().zip(&pos_logits) {
            coeff[a * n + b] = coeff[a * n + b] - (l - lse_pos).exp() / tau;
        }
        for (&b, &l) in neg.iter().zip(&neg_logits) {
            coeff[a * n + b] = coeff[a * n + b] + (l - lse_neg).exp() / tau;
        }
    }

    if contributing == 0 {
        return Err(Error::EmptyBatchLoss);
    }
    let scale = T::one() / T::from_usize(contributing).unwrap();

    let mut grad = vec![vec![T::zero(); dim]; n];
    for a in 0..n {
        for b in 0..n {
            let c = coeff[a * n + b];
            if c == T::zero() {
                continue;
            }
            let c = c * scale;
            let (xa, xb) = (features[a].as_ref(), features[b].as_ref());
            for d in 0..dim {
                grad[a][d] = grad[a][d] + c * xb[d];
                grad[b][d] = grad[b][d] + c * xa[d];
            }
        }
    }

    Ok(LossOutput {
        value: total * scale,
        grad,
    })
}

/// Graph contrastive loss over all nodes of the graph.
///
/// Feature `i` belongs to node `i`. Every node needs at least one neighbor
/// and at least one non-neighbor.
pub fn gc_loss<T, V>(features: &[V], laplacian: &Laplacian<'_>, tau: T) -> Result<LossOutput<T>>
where
    T: Scalar,
    V: AsRef<[T]>,
{
    if features.len() != laplacian.n() {
        return Err(Error::shape(format!(
            "{} features for a graph of {} nodes",
            features.len(),
            laplacian.n()
        )));
    }
    let nodes: Vec<usize> = (0..features.len()).collect();
    let relation = GraphPairs {
        laplacian,
        nodes: &nodes,
    };
    contrastive_loss(features, &relation, tau, EmptyNegatives::Fail)
}

/// Representation graph contrastive loss on a batch of augmented features.
///
/// `nodes[a]` is the graph node that batch position `a` was drawn from.
/// Positions sharing a node are neither positives nor negatives of each
/// other. Anchors whose every other batch member is a neighbor are skipped.
pub fn rgc_loss<T, V>(
    features: &[V],
    nodes: &[usize],
    laplacian: &Laplacian<'_>,
    tau_r: T,
) -> Result<LossOutput<T>>
where
    T: Scalar,
    V: AsRef<[T]>,
{
    if features.len() != nodes.len() {
        return Err(Error::shape(format!(
            "{} features for {} batch nodes",
            features.len(),
            nodes.len()
        )));
    }
    if let Some(&bad) = nodes.iter().find(|&&i| i >= laplacian.n()) {
        return Err(Error::shape(format!("batch node {bad} outside the graph")));
    }
    let relation = GraphPairs { laplacian, nodes };
    contrastive_loss(features, &relation, tau_r, EmptyNegatives::Skip)
}

fn check_rows<T: Scalar, V: AsRef<[T]>>(rows: &[V], what: &str) -> Result<usize> {
    let k = rows
        .first()
        .map(|r| r.as_ref().len())
        .ok_or_else(|| Error::shape(format!("{what} has no rows")))?;
    if k == 0 || rows.iter().any(|r| r.as_ref().len() != k) {
        return Err(Error::shape(format!(
            "{what} rows have inconsistent widths"
        )));
    }
    Ok(k)
}

/// Assignment graph contrastive loss between cluster columns.
///
/// Row `n` of `q_tilde` holds the assignment of an augmented random neighbor
/// of sample `n`; row `n` of `q` that of an augmentation of `n` itself. The
/// loss is a `K`-way cross-entropy that matches column `i` of `q` with column
/// `i` of `q_tilde`, using raw (unnormalized) columns.
pub fn agc_loss<T, V>(q: &[V], q_tilde: &[V], tau_a: T) -> Result<PairedLossOutput<T>>
where
    T: Scalar,
    V: AsRef<[T]>,
{
    let k = check_rows(q, "q")?;
    let k_tilde = check_rows(q_tilde, "q_tilde")?;
    if q.len() != q_tilde.len() || k != k_tilde {
        return Err(Error::shape(format!(
            "q is {}x{k} but q_tilde is {}x{k_tilde}",
            q.len(),
            q_tilde.len()
        )));
    }
    let n = q.len();

    // m[i][j] = q'_i · q̃'_j / τ over cluster columns.
    let mut m = vec![T::zero(); k * k];
    for (row, row_t) in q.iter().zip(q_tilde) {
        let (row, row_t) = (row.as_ref(), row_t.as_ref());
        for i in 0..k {
            for j in 0..k {
                m[i * k + j] = m[i * k + j] + row[i] * row_t[j];
            }
        }
    }
    for v in &mut m {
        *v = *v / tau_a;
    }

    let kf = T::from_usize(k).unwrap();
    let mut value = T::zero();
    // g[i][j] = ∂L/∂m_ij = (softmax_j(m_i·) − δ_ij) / K
    let mut g = vec![T::zero(); k * k];
    for i in 0..k {
        let row = &m[i * k..(i + 1) * k];
        let lse = log_sum_exp(row);
        value = value + (lse - row[i]);
        for j in 0..k {
            let p = (row[j] - lse).exp();
            let delta = if i == j { T::one() } else { T::zero() };
            g[i * k + j] = (p - delta) / kf;
        }
    }
    value = value / kf;

    let mut grad_q = vec![vec![T::zero(); k]; n];
    let mut grad_q_tilde = vec![vec![T::zero(); k]; n];
    for s in 0..n {
        let (row, row_t) = (q[s].as_ref(), q_tilde[s].as_ref());
        for i in 0..k {
            for j in 0..k {
                let gij = g[i * k + j] / tau_a;
                grad_q[s][i] = grad_q[s][i] + gij * row_t[j];
                grad_q_tilde[s][j] = grad_q_tilde[s][j] + gij * row[i];
            }
        }
    }

    Ok(PairedLossOutput {
        value,
        grad_q,
        grad_q_tilde,
    })
}

/// Cluster regularization `log K − H(Z)` where `Z` is the normalized column mass.
///
/// Empty clusters contribute `0 · log 0 = 0` to the entropy; their gradient is
/// evaluated at the smallest positive mass so it stays finite.
pub fn cr_loss<T, V>(q: &[V]) -> Result<LossOutput<T>>
where
    T: Scalar,
    V: AsRef<[T]>,
{
    let k = check_rows(q, "q")?;
    let mut mass = vec![T::zero(); k];
    for row in q {
        for (m, &p) in mass.iter_mut().zip(row.as_ref()) {
            *m = *m + p;
        }
    }
    let total: T = mass.iter().copied().sum();
    if total.is_nan() || total <= T::zero() {
        return Err(Error::InvalidSpec("assignment matrix has no mass".into()));
    }
    let z: Vec<T> = mass.iter().map(|&m| m / total).collect();
    let z_log_z: Vec<T> = z
        .iter()
        .map(|&p| if p > T::zero() { p * p.ln() } else { T::zero() })
        .collect();
    let neg_entropy: T = z_log_z.iter().copied().sum();
    let value = T::from_usize(k).unwrap().ln() + neg_entropy;

    let dmass: Vec<T> = z
        .iter()
        .map(|&p| (p.max(T::min_positive_value()).ln() - neg_entropy) / total)
        .collect();
    let grad = vec![dmass; q.len()];
    Ok(LossOutput { value, grad })
}

/// Weighted sum `RGC + λ·AGC + η·CR` with matching gradient blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss<T> {
    pub value: T,
    pub rgc: T,
    pub agc: T,
    pub cr: T,
    /// Gradient w.r.t. the RGC batch features.
    pub grad_z: Vec<Vec<T>>,
    /// Gradient w.r.t. the anchor assignment rows (AGC `q` plus CR).
    pub grad_q: Vec<Vec<T>>,
    /// Gradient w.r.t. the partner assignment rows (AGC `q̃`).
    pub grad_q_tilde: Vec<Vec<T>>,
}

pub fn total_loss<T: Scalar>(
    rgc: &LossOutput<T>,
    agc: &PairedLossOutput<T>,
    cr: &LossOutput<T>,
    weights: LossWeights<T>,
) -> Result<TotalLoss<T>> {
    let same_shape = |a: &[Vec<T>], b: &[Vec<T>]| {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len())
    };
    if !same_shape(&agc.grad_q, &cr.grad) {
        return Err(Error::shape(
            "AGC and CR must be computed on the same assignment rows",
        ));
    }
    let LossWeights { lambda, eta } = weights;
    let grad_q = agc
        .grad_q
        .iter()
        .zip(&cr.grad)
        .map(|(ga, gc)| {
            ga.iter()
                .zip(gc)
                .map(|(&a, &c)| lambda * a + eta * c)
                .collect()
        })
        .collect();
    let grad_q_tilde = agc
        .grad_q_tilde
        .iter()
        .map(|g| g.iter().map(|&v| lambda * v).collect())
        .collect();
    Ok(TotalLoss {
        value: rgc.value + lambda * agc.value + eta * cr.value,
        rgc: rgc.value,
        agc: agc.value,
        cr: cr.value,
        grad_z: rgc.grad.clone(),
        grad_q,
        grad_q_tilde,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{laplacian, KnnGraph};
    use crate::types::l2_normalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        l2_normalize(&v).unwrap().into_inner()
    }

    fn random_stochastic(rng: &mut impl Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            })
            .collect()
    }

    /// Central differences of `f` at every coordinate of `x`.
    fn numeric_grad(x: &[Vec<f64>], f: impl Fn(&[Vec<f64>]) -> f64) -> Vec<Vec<f64>> {
        let h = 1e-5;
        let mut work = x.to_vec();
        let mut out = vec![vec![0.0; x[0].len()]; x.len()];
        for i in 0..x.len() {
            for d in 0..x[i].len() {
                let orig = work[i][d];
                work[i][d] = orig + h;
                let up = f(&work);
                work[i][d] = orig - h;
                let down = f(&work);
                work[i][d] = orig;
                out[i][d] = (up - down) / (2.0 * h);
            }
        }
        out
    }

    fn assert_grad_close(analytic: &[Vec<f64>], numeric: &[Vec<f64>], tol: f64) {
        for (ra, rn) in analytic.iter().zip(numeric) {
            for (&a, &n) in ra.iter().zip(rn) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                assert!(rel <= tol, "analytic {a} vs numeric {n} (rel {rel})");
            }
        }
    }

    #[test]
    fn similarity_values() {
        let x = [1.0, 0.0];
        assert!((similarity(&x, &x, 0.1) - 10f64.exp()).abs() < 1e-9);
        assert!((similarity(&x, &[0.0, 1.0], 1.0) - 1.0).abs() < 1e-15);
        assert!((similarity(&x, &[-1.0, 0.0], 1.0) - 0.367879441171).abs() < 1e-9);
    }

    #[test]
    fn gc_loss_on_path_with_identical_features() {
        let path = KnnGraph::from_edges(3, 1, &[(0, 1), (1, 2)]).unwrap();
        let lap = laplacian(&path).unwrap();
        let x = vec![vec![1.0, 0.0]; 3];
        // Node 1 is adjacent to both others, so its negative set is empty.
        assert!(matches!(gc_loss(&x, &lap, 0.5), Err(Error::NoNegatives(1))));

        // Star on node 1: the center still has no negatives, each leaf has
        // ratio (1/√(1·3))·S / (2·S).
        let g = KnnGraph::from_edges(4, 1, &[(0, 1), (1, 2), (1, 3)]).unwrap();
        let lap = laplacian(&g).unwrap();
        let loss = gc_loss(&vec![vec![1.0, 0.0]; 4], &lap, 0.5);
        assert!(matches!(loss, Err(Error::NoNegatives(1))));

        let relation = GraphPairs {
            laplacian: &lap,
            nodes: &[0, 1, 2, 3],
        };
        let out = contrastive_loss(
            &vec![vec![1.0, 0.0]; 4],
            &relation,
            0.5,
            EmptyNegatives::Skip,
        )
        .unwrap();
        // Leaves 0, 2, 3 contribute −log((1/√3)/2) each.
        let expected = -((1.0 / 3f64.sqrt()) / 2.0).ln();
        assert!((out.value - expected).abs() < 1e-12);
    }

    #[test]
    fn gc_loss_node_zero_of_path() {
        // Path 0–1–2 with identical features: node 0's ratio is (1/√2)·S / S.
        let path = KnnGraph::from_edges(3, 1, &[(0, 1), (1, 2)]).unwrap();
        let lap = laplacian(&path).unwrap();
        let x = vec![vec![0.6, 0.8]; 3];
        let out = rgc_loss(&x, &[0, 1, 2], &lap, 0.1).unwrap();
        // Node 1 is skipped; nodes 0 and 2 both give −log(1/√2).
        assert!((out.value - (-(1.0 / 2f64.sqrt()).ln())).abs() < 1e-12);
    }

    #[test]
    fn gc_loss_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = KnnGraph::from_edges(6, 1, &[(0, 1), (2, 3), (4, 5), (1, 2)]).unwrap();
        let lap = laplacian(&g).unwrap();
        let x: Vec<Vec<f64>> = (0..6).map(|_| random_unit(&mut rng, 2)).collect();
        let theta: f64 = 0.7;
        let (c, s) = (theta.cos(), theta.sin());
        let rotated: Vec<Vec<f64>> = x
            .iter()
            .map(|v| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]])
            .collect();
        let a = gc_loss(&x, &lap, 0.2).unwrap().value;
        let b = gc_loss(&rotated, &lap, 0.2).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rgc_disjoint_edges_hand_value() {
        // Graph of two disjoint edges; batch holds all four nodes.
        let g = KnnGraph::from_edges(4, 1, &[(0, 1), (2, 3)]).unwrap();
        let lap = laplacian(&g).unwrap();
        let x = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ];
        let tau = 0.5;
        let out = rgc_loss(&x, &[0, 1, 2, 3], &lap, tau).unwrap();
        let e = |d: f64| (d / tau).exp();
        // Anchor 0: positive 1 (dot 0), negatives 2 (dot −1) and 3 (dot 0).
        let l0 = -(e(0.0) / (e(-1.0) + e(0.0))).ln();
        // Every anchor sees the same configuration by symmetry.
        assert!((out.value - l0).abs() < 1e-12);
    }

    #[test]
    fn rgc_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = KnnGraph::from_edges(8, 1, &[(0, 1), (2, 3), (4, 5), (6, 7), (1, 2)]).unwrap();
        let lap = laplacian(&g).unwrap();
        let x: Vec<Vec<f64>> = (0..8).map(|_| random_unit(&mut rng, 4)).collect();
        let nodes: Vec<usize> = (0..8).collect();
        let base = rgc_loss(&x, &nodes, &lap, 0.1).unwrap().value;
        let perm = [5, 2, 7, 0, 3, 1, 6, 4];
        let xp: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
        let np: Vec<usize> = perm.to_vec();
        let permuted = rgc_loss(&xp, &np, &lap, 0.1).unwrap().value;
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn rgc_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 16;
            let edges: Vec<(usize, usize)> = (0..n / 2)
                .map(|i| (2 * i, 2 * i + 1))
                .chain([(1, 4), (5, 9)])
                .collect();
            let g = KnnGraph::from_edges(n, 1, &edges).unwrap();
            let lap = laplacian(&g).unwrap();
            let x: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, 5)).collect();
            let nodes: Vec<usize> = (0..n).collect();
            let out = rgc_loss(&x, &nodes, &lap, 0.5).unwrap();
            let num = numeric_grad(&x, |v| rgc_loss(v, &nodes, &lap, 0.5).unwrap().value);
            assert_grad_close(&out.grad, &num, 1e-6);
        }
    }

    #[test]
    fn agc_balanced_one_hot() {
        let q = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ];
        let out = agc_loss(&q, &q, 1.0_f64).unwrap();
        assert!((out.value - 0.126_928_011_042_972_6).abs() < 1e-12);
    }

    #[test]
    fn agc_single_cluster_is_zero() {
        let q = vec![vec![1.0]; 5];
        let out = agc_loss(&q, &q, 1.0).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn agc_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_stochastic(&mut rng, 8, 3);
        let qt = random_stochastic(&mut rng, 8, 3);
        let out = agc_loss(&q, &qt, 0.7).unwrap();
        let num_q = numeric_grad(&q, |v| agc_loss(v, &qt, 0.7).unwrap().value);
        let num_qt = numeric_grad(&qt, |v| agc_loss(&q, v, 0.7).unwrap().value);
        assert_grad_close(&out.grad_q, &num_q, 1e-6);
        assert_grad_close(&out.grad_q_tilde, &num_qt, 1e-6);
    }

    #[test]
    fn agc_sharpens_as_temperature_drops() {
        let q = vec![
            vec![0.9, 0.1],
            vec![0.8, 0.2],
            vec![0.1, 0.9],
            vec![0.2, 0.8],
        ];
        let values: Vec<f64> = [1.0, 0.5, 0.1]
            .iter()
            .map(|&t| agc_loss(&q, &q, t).unwrap().value)
            .collect();
        assert!(values.iter().all(|&v| v >= 0.0));
        assert!(values[0] > values[1] && values[1] > values[2], "{values:?}");
    }

    #[test]
    fn cr_uniform_and_collapse() {
        let uniform = vec![vec![0.25; 4]; 6];
        assert!(cr_loss::<f64, _>(&uniform).unwrap().value.abs() < 1e-12);

        let mut collapsed = vec![vec![0.0; 10]; 7];
        for row in &mut collapsed {
            row[0] = 1.0;
        }
        let out = cr_loss(&collapsed).unwrap();
        assert!((out.value - 10f64.ln()).abs() < 1e-12);
        assert!(out.grad.iter().flatten().all(|g| g.is_finite()));
    }

    #[test]
    fn cr_two_by_two_hand_value() {
        let q = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        let out = cr_loss::<f64, _>(&q).unwrap();
        assert!((out.value - 0.130_812_035_941_136_94).abs() < 1e-12);
    }

    #[test]
    fn cr_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_stochastic(&mut rng, 8, 4);
        let out = cr_loss(&q).unwrap();
        let num = numeric_grad(&q, |v| cr_loss(v).unwrap().value);
        assert_grad_close(&out.grad, &num, 1e-6);
    }

    #[test]
    fn total_is_weighted_sum() {
        let rgc = LossOutput {
            value: 1.0_f64,
            grad: vec![vec![1.0, 2.0]],
        };
        let agc = PairedLossOutput {
            value: 0.4,
            grad_q: vec![vec![0.5, -0.5]],
            grad_q_tilde: vec![vec![2.0, 4.0]],
        };
        let cr = LossOutput {
            value: 0.2,
            grad: vec![vec![0.1, 0.3]],
        };

        let t = total_loss(&rgc, &agc, &cr, LossWeights::new(0.5, 1.0).unwrap()).unwrap();
        assert!((t.value - 1.4).abs() < 1e-15);
        assert_eq!(t.grad_z, rgc.grad);
        assert_eq!(t.grad_q, vec![vec![0.5 * 0.5 + 0.1, 0.5 * -0.5 + 0.3]]);
        assert_eq!(t.grad_q_tilde, vec![vec![1.0, 2.0]]);

        let only_rgc = total_loss(&rgc, &agc, &cr, LossWeights::new(0.0, 0.0).unwrap()).unwrap();
        assert_eq!(only_rgc.value, rgc.value);
        assert!(only_rgc.grad_q.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        assert!(Temperatures::new(0.0, 1.0).is_err());
        assert!(LossWeights::new(-0.1, 1.0).is_err());
    }
}
