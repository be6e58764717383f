//! Manifold structures over the training samples: exact k-nearest neighbors,
//! locally-linear-embedding barycentric weights and the Laplacians used to
//! regularize sparse codes.
//!
//! Every Laplacian is rescaled so that its trace equals a caller-supplied
//! target (the number of samples the graph regularizes), which lets a single
//! `β` carry the same weight across constructions.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Relative Tikhonov weight added to the local Gram matrix.
pub const GRAM_REGULARIZATION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    /// `L = (I − V)ᵀ(I − V)` from barycentric weights `V`.
    Lle,
    /// Gaussian weights on the symmetrized knn support, `L = Deg − W`.
    GaussianKnn,
    /// Gaussian weights on pairs closer than a distance percentile.
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianGraphParams {
    /// Kernel width σ.
    pub sigma: f64,
    /// Distance percentile ζ defining the threshold κ (threshold graphs).
    pub zeta: f64,
    /// Neighbor count (knn graphs).
    pub k: usize,
}

impl GaussianGraphParams {
    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(Error::InvalidConfig(format!("zeta must lie in (0, 1], got {}", self.zeta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NeighborGraph {
    pub kind: GraphKind,
    /// Neighbor count (0 for threshold graphs).
    pub k: usize,
    /// `knn(i)` for each sample, nearest first. Empty for threshold graphs.
    pub indices: Vec<Vec<usize>>,
    /// Barycentric weights `V` (LLE) or the Gaussian adjacency `W`.
    pub weights: CsrMatrix,
    /// The trace-normalized Laplacian.
    pub laplacian: CsrMatrix,
    /// Normalization factor `ω = target / tr(L_raw)`; 1 when the raw graph is empty.
    pub omega: f64,
    pub sigma: Option<f64>,
    pub kappa: Option<f64>,
    /// Set when no edge survived and the Laplacian is identically zero.
    pub empty: bool,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.laplacian.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `A · L` for a `p × N` code matrix.
    pub fn apply(&self, codes: ArrayView2<f64>) -> Array2<f64> {
        self.laplacian.right_mul_transposed(codes)
    }

    /// `tr(A L Aᵀ)`.
    pub fn quadratic_form(&self, codes: ArrayView2<f64>) -> f64 {
        let al = self.apply(codes);
        crate::solver::inner(al.view(), codes)
    }

    /// Rebuilds an LLE graph from stored neighbor lists, barycentric weights
    /// and normalization factor.
    pub fn lle_from_parts(indices: Vec<Vec<usize>>, weights: CsrMatrix, omega: f64) -> Self {
        let k = indices.first().map_or(0, Vec::len);
        let mut laplacian = lle_laplacian(&weights);
        laplacian.scale(omega);
        NeighborGraph {
            kind: GraphKind::Lle,
            k,
            indices,
            weights,
            laplacian,
            omega,
            sigma: None,
            kappa: None,
            empty: false,
        }
    }
}

/// Squared Euclidean distances between all pairs of columns.
pub fn pairwise_sq_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.ncols();
    let cols: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(&cols[i], &cols[j]);
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }
    dist
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_by(dists: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = dists.collect();
    // Ties resolve to the lower index.
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// For each column `i`, the `k` other columns closest in Euclidean distance,
/// nearest first.
pub fn knn_indices(x: ArrayView2<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = x.ncols();
    check_k(k, n)?;
    let dist = pairwise_sq_distances(x);
    Ok(knn_from_distances(&dist, k))
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::InvalidConfig(format!(
            "neighbor count k = {k} must satisfy 1 <= k < N = {n}"
        )));
    }
    Ok(())
}

fn knn_from_distances(dist: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
    dist.rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            nearest_by(
                row.iter().copied().enumerate().filter(|&(j, _)| j != i),
                k,
            )
            .into_iter()
            .map(|(j, _)| j)
            .collect()
        })
        .collect()
}

/// The `k` training columns closest to `query`, nearest first, with their
/// squared distances.
pub fn knn_query(train: ArrayView2<f64>, query: ArrayView1<f64>, k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 || k > train.ncols() {
        return Err(Error::InvalidConfig(format!(
            "neighbor count k = {k} must satisfy 1 <= k <= N = {}",
            train.ncols()
        )));
    }
    if query.len() != train.nrows() {
        return Err(Error::Shape(format!(
            "query has {} features, training samples have {}",
            query.len(),
            train.nrows()
        )));
    }
    let q = query.to_vec();
    let dists = train
        .columns()
        .into_iter()
        .enumerate()
        .map(|(j, col)| (j, col.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()));
    Ok(nearest_by(dists, k))
}

/// Weights `λ` with `Σλ = 1` minimizing `‖target − Σ λ_j neighbor_j‖²`.
///
/// Solves the regularized local Gram system `(G + ε·tr(G)/k·I) λ = 𝟙` and
/// normalizes. Falls back to uniform weights when every neighbor coincides
/// with the target.
pub fn barycentric_weights(target: ArrayView1<f64>, neighbors: ArrayView2<f64>) -> Array1<f64> {
    let k = neighbors.ncols();
    assert!(k >= 1, "at least one neighbor required");
    if k == 1 {
        return Array1::ones(1);
    }
    // Columns of z are target − neighbor_j.
    let z = &target.insert_axis(Axis(1)) - &neighbors;
    let gram = z.t().dot(&z);
    let trace = gram.diag().sum();
    if !(trace > 0.0) {
        return Array1::from_elem(k, 1.0 / k as f64);
    }
    let reg = GRAM_REGULARIZATION * trace / k as f64;
    let g = DMatrix::from_fn(k, k, |i, j| gram[[i, j]] + if i == j { reg } else { 0.0 });
    let ones = DVector::from_element(k, 1.0);
    let solution = match g.clone().cholesky() {
        Some(chol) => chol.solve(&ones),
        None => g
            .lu()
            .solve(&ones)
            .unwrap_or_else(|| DVector::from_element(k, 1.0)),
    };
    let total: f64 = solution.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Array1::from_elem(k, 1.0 / k as f64);
    }
    Array1::from_iter(solution.iter().map(|v| v / total))
}

fn lle_laplacian(v: &CsrMatrix) -> CsrMatrix {
    let n = v.rows();
    let mut triplets = Vec::with_capacity(n * 8);
    for i in 0..n {
        triplets.push((i, i, 1.0));
        let row: Vec<(usize, f64)> = v.row(i).collect();
        for &(j, w) in &row {
            triplets.push((i, j, -w));
            triplets.push((j, i, -w));
            for &(m, u) in &row {
                triplets.push((j, m, w * u));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

fn normalize(laplacian: &mut CsrMatrix, trace_target: f64) -> (f64, bool) {
    let trace = laplacian.trace();
    if trace > 0.0 {
        let omega = trace_target / trace;
        laplacian.scale(omega);
        (omega, false)
    } else {
        (1.0, true)
    }
}

/// LLE graph: barycentric weights of every sample over its `k` nearest
/// neighbors, assembled into `L = I − V − Vᵀ + VᵀV` and scaled to trace
/// `trace_target`.
pub fn build_lle_graph(x: ArrayView2<f64>, k: usize, trace_target: f64) -> Result<NeighborGraph> {
    let indices = knn_indices(x, k)?;
    let mut triplets = Vec::with_capacity(x.ncols() * k);
    for (i, nbrs) in indices.iter().enumerate() {
        let neighbors = x.select(Axis(1), nbrs);
        let w = barycentric_weights(x.column(i), neighbors.view());
        for (&j, &wj) in nbrs.iter().zip(w.iter()) {
            triplets.push((i, j, wj));
        }
    }
    let v = CsrMatrix::from_triplets(x.ncols(), x.ncols(), triplets);
    let mut laplacian = lle_laplacian(&v);
    let (omega, empty) = normalize(&mut laplacian, trace_target);
    Ok(NeighborGraph {
        kind: GraphKind::Lle,
        k,
        indices,
        weights: v,
        laplacian,
        omega,
        sigma: None,
        kappa: None,
        empty,
    })
}

fn gaussian_laplacian(n: usize, edges: &[(usize, usize, f64)]) -> (CsrMatrix, CsrMatrix) {
    let mut w = Vec::with_capacity(edges.len() * 2);
    let mut l = Vec::with_capacity(edges.len() * 4);
    for &(i, j, v) in edges {
        w.push((i, j, v));
        w.push((j, i, v));
        l.push((i, j, -v));
        l.push((j, i, -v));
        l.push((i, i, v));
        l.push((j, j, v));
    }
    (CsrMatrix::from_triplets(n, n, w), CsrMatrix::from_triplets(n, n, l))
}

#[inline]
pub fn gaussian_weight(sq_dist: f64, sigma: f64) -> f64 {
    (-sq_dist / (2.0 * sigma * sigma)).exp()
}

/// Gaussian weights on the symmetrized knn support (`j ∈ knn(i)` or
/// `i ∈ knn(j)`), `L = Deg − W`, trace-normalized.
pub fn build_gaussian_knn_laplacian(
    x: ArrayView2<f64>,
    params: &GaussianGraphParams,
    trace_target: f64,
) -> Result<NeighborGraph> {
    if !(params.sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", params.sigma)));
    }
    let n = x.ncols();
    check_k(params.k, n)?;
    let dist = pairwise_sq_distances(x);
    let indices = knn_from_distances(&dist, params.k);
    let mut support = std::collections::BTreeSet::new();
    for (i, nbrs) in indices.iter().enumerate() {
        for &j in nbrs {
            support.insert((i.min(j), i.max(j)));
        }
    }
    let edges: Vec<(usize, usize, f64)> = support
        .into_iter()
        .map(|(i, j)| (i, j, gaussian_weight(dist[[i, j]], params.sigma)))
        .collect();
    let (weights, mut laplacian) = gaussian_laplacian(n, &edges);
    let (omega, empty) = normalize(&mut laplacian, trace_target);
    Ok(NeighborGraph {
        kind: GraphKind::GaussianKnn,
        k: params.k,
        indices,
        weights,
        laplacian,
        omega,
        sigma: Some(params.sigma),
        kappa: None,
        empty,
    })
}

/// Empirical `zeta`-quantile with linear interpolation between order
/// statistics. `values` need not be sorted.
pub fn quantile(values: &[f64], zeta: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = zeta.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// The distance threshold κ for percentile ζ over all pairwise distances.
/// `ζ = 1` admits every pair.
pub fn distance_threshold(x: ArrayView2<f64>, zeta: f64) -> f64 {
    if zeta >= 1.0 {
        return f64::INFINITY;
    }
    let dist = pairwise_sq_distances(x);
    threshold_from_distances(&dist, zeta)
}

fn threshold_from_distances(dist: &Array2<f64>, zeta: f64) -> f64 {
    if zeta >= 1.0 {
        return f64::INFINITY;
    }
    let n = dist.nrows();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push(dist[[i, j]].sqrt());
        }
    }
    quantile(&pairs, zeta)
}

/// Gaussian weights on every pair with distance strictly below the
/// `zeta`-percentile κ, `L = Deg − W`, trace-normalized. An empty edge set
/// yields a zero Laplacian with `empty` set and `ω = 1`.
pub fn build_threshold_laplacian(
    x: ArrayView2<f64>,
    params: &GaussianGraphParams,
    trace_target: f64,
) -> Result<NeighborGraph> {
    params.validate()?;
    let n = x.ncols();
    if n < 2 {
        return Err(Error::InvalidConfig("threshold graph needs at least two samples".into()));
    }
    let dist = pairwise_sq_distances(x);
    let kappa = threshold_from_distances(&dist, params.zeta);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if dist[[i, j]].sqrt() < kappa {
                edges.push((i, j, gaussian_weight(dist[[i, j]], params.sigma)));
            }
        }
    }
    let (weights, mut laplacian) = gaussian_laplacian(n, &edges);
    let (omega, empty) = normalize(&mut laplacian, trace_target);
    Ok(NeighborGraph {
        kind: GraphKind::Threshold,
        k: 0,
        indices: Vec::new(),
        weights,
        laplacian,
        omega,
        sigma: Some(params.sigma),
        kappa: Some(kappa),
        empty,
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn points() -> impl Strategy<Value = Array2<f64>> {
        (8usize..20).prop_flat_map(|n| {
            proptest::collection::vec(-5.0f64..5.0, 3 * n).prop_map(move |v| Array2::from_shape_vec((3, n), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn graph_laplacians_are_positive_semidefinite(x in points(), codes in proptest::collection::vec(-3.0f64..3.0, 40), k in 2usize..5) {
            let n = x.ncols();
            let a = Array2::from_shape_fn((2, n), |(i, j)| codes[(i * n + j) % codes.len()]);
            let lle = build_lle_graph(x.view(), k, n as f64).unwrap();
            let gauss = build_gaussian_knn_laplacian(x.view(), &GaussianGraphParams { sigma: 2.0, zeta: 0.3, k }, n as f64).unwrap();
            for g in [lle, gauss] {
                let q = g.quadratic_form(a.view());
                prop_assert!(q >= -1e-9 * (1.0 + a.iter().map(|v| v * v).sum::<f64>()));
                // Constant rows are in the kernel of the Laplacian.
                let ones = Array2::from_elem((1, n), 1.0);
                prop_assert!(g.apply(ones.view()).iter().all(|v| v.abs() < 1e-8));
            }
        }

        #[test]
        fn barycentric_weights_sum_to_one(x in points()) {
            let target = x.column(0);
            let nbrs = x.slice(ndarray::s![.., 1..5]);
            let w = barycentric_weights(target, nbrs);
            prop_assert!((w.sum() - 1.0).abs() < 1e-9);
        }
    }
}
