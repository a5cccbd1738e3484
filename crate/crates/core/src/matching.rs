//! Coarse node matching and coarse-to-fine point matching.
//!
//! Node features are compared with a self-scaling Gaussian kernel, the
//! similarity matrix is normalized by Sinkhorn optimal transport with a
//! dustbin row/column for unmatchable points, and the top-k node pairs
//! expand into patch-level point matching around each node.

use nalgebra::DMatrix;
use num_traits::Float;
use std::collections::HashSet;

use crate::cloud::{feature_distance, PointCloud};
use crate::error::{Error, Result};
use crate::index::SpatialIndex;
use crate::pyramid::SamplingPyramid;
use crate::scalar::Scalar;

/// Weighted correspondences between two indexed point sets.
///
/// Invariants: equal-length pair/weight lists, indices in range for the
/// clouds given at construction, weights finite in [0, 1], no duplicate
/// (src, tgt) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet<T: Scalar> {
    pairs: Vec<(usize, usize)>,
    weights: Vec<T>,
}

impl<T: Scalar> CorrespondenceSet<T> {
    /// Validates and builds a correspondence set for clouds of the given
    /// sizes.
    pub fn new(
        pairs: Vec<(usize, usize)>,
        weights: Vec<T>,
        src_len: usize,
        tgt_len: usize,
    ) -> Result<Self, T> {
        if pairs.len() != weights.len() {
            return Err(Error::InvalidConfig(format!(
                "{} pairs but {} weights",
                pairs.len(),
                weights.len()
            )));
        }
        let mut seen = HashSet::with_capacity(pairs.len());
        for (n, &(s, t)) in pairs.iter().enumerate() {
            if s >= src_len || t >= tgt_len {
                return Err(Error::InvalidConfig(format!(
                    "pair {n} = ({s}, {t}) out of range for {src_len}×{tgt_len} clouds"
                )));
            }
            if !seen.insert((s, t)) {
                return Err(Error::InvalidConfig(format!("duplicate pair ({s}, {t})")));
            }
        }
        for (n, w) in weights.iter().enumerate() {
            if !Float::is_finite(*w) || *w < T::zero() || *w > T::one() {
                return Err(Error::InvalidConfig(format!(
                    "weight {n} = {w} outside [0, 1]"
                )));
            }
        }
        Ok(Self { pairs, weights })
    }

    /// The empty set.
    pub fn empty() -> Self {
        Self { pairs: Vec::new(), weights: Vec::new() }
    }

    /// Number of correspondences.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// True when no correspondences are present.
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// (src, tgt) index pairs.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Per-pair weights, parallel to [`Self::pairs`].
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Iterates `(src, tgt, weight)` triples.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.pairs
            .iter()
            .zip(self.weights.iter())
            .map(|(&(s, t), &w)| (s, t, w))
    }

    /// The subset at the given positions (not indices into the clouds),
    /// in the given order.
    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            pairs: positions.iter().map(|&i| self.pairs[i]).collect(),
            weights: positions.iter().map(|&i| self.weights[i]).collect(),
        }
    }
}

/// Point-to-node grouping: which fine-level points form each node's patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchAssignment {
    members: Vec<Vec<usize>>,
}

impl PatchAssignment {
    /// Number of nodes.
    pub fn node_count(&self) -> usize {
        self.members.len()
    }

    /// Fine-point indices of node `i`'s patch, nearest first.
    pub fn members(&self, node: usize) -> &[usize] {
        &self.members[node]
    }
}

/// Knobs shared by the matching operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams<T: Scalar> {
    /// Sinkhorn iteration count.
    pub sinkhorn_iterations: usize,
    /// Logit assigned to the dustbin row/column.
    pub dustbin_logit: T,
    /// Multiplier on the self-scaled kernel bandwidth σ_f; values below 1
    /// sharpen the similarity contrast.
    pub kernel_scale: T,
}

impl<T: Scalar> Default for MatchParams<T> {
    fn default() -> Self {
        Self {
            sinkhorn_iterations: 100,
            dustbin_logit: T::one(),
            kernel_scale: T::one(),
        }
    }
}

impl<T: Scalar> MatchParams<T> {
    pub fn validate(&self) -> Result<(), T> {
        if self.sinkhorn_iterations == 0 {
            return Err(Error::InvalidConfig("sinkhorn iterations must be ≥ 1".into()));
        }
        if !Float::is_finite(self.dustbin_logit) || !(self.kernel_scale > T::zero()) {
            return Err(Error::InvalidConfig(
                "dustbin logit must be finite and kernel scale positive".into(),
            ));
        }
        Ok(())
    }
}

/// Log-similarity matrix: the exponent of the Gaussian feature kernel
/// `exp(−‖f_i − f_j‖² / 2σ_f²)` with σ_f = (upper) median pairwise
/// feature distance times `kernel_scale`.
///
/// The exponents feed Sinkhorn as logits, so the transport kernel is the
/// Gaussian similarity itself. Feeding the bounded similarity values as
/// logits instead would cap the per-cell contrast at e ≈ 2.7 and let the
/// dustbin swallow whole rows in asymmetric patches.
fn similarity_logits<T: Scalar>(
    src: &PointCloud<T>,
    tgt: &PointCloud<T>,
    kernel_scale: T,
    what: &'static str,
) -> Result<DMatrix<T>, T> {
    let fs = src.features().ok_or(Error::MissingFeatures(what))?;
    let ft = tgt.features().ok_or(Error::MissingFeatures(what))?;
    if fs.width() != ft.width() {
        return Err(Error::InvalidConfig(format!(
            "feature width mismatch: {} vs {}",
            fs.width(),
            ft.width()
        )));
    }
    let (m, n) = (src.len(), tgt.len());
    let mut dist = DMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            dist[(i, j)] = feature_distance(fs.row(i), ft.row(j));
        }
    }
    let mut sorted: Vec<T> = dist.iter().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or_else(T::one);
    let sigma = if median > T::cast(1e-12) { median * kernel_scale } else { T::one() };
    let denom = T::cast(2.0) * sigma * sigma;
    Ok(dist.map(|d| -(d * d) / denom))
}

/// Runs Sinkhorn normalization and returns the full augmented
/// `(m+1)×(n+1)` transport matrix, dustbins included.
///
/// Marginals are 1 per real row/column; the dustbin row absorbs
/// `max(1, n−m+1)` and the dustbin column `max(1, m−n+1)`, which balances
/// the totals while keeping the dustbin's pull modest — similarities live
/// in (0, 1], so a dustbin with a whole side's mass would outdraw even a
/// perfect match. Log-domain updates keep arbitrary finite scores
/// overflow-safe; inputs bounded by |z| ≤ 30 take an algebraically
/// identical scaling-form fast path.
pub fn sinkhorn_augmented<T: Scalar>(
    scores: &DMatrix<T>,
    iterations: usize,
    dustbin_logit: T,
) -> DMatrix<T> {
    let (m, n) = scores.shape();
    let z = DMatrix::from_fn(m + 1, n + 1, |i, j| {
        if i < m && j < n {
            scores[(i, j)]
        } else {
            dustbin_logit
        }
    });
    let row_slack = (n.saturating_sub(m) + 1) as f64;
    let col_slack = (m.saturating_sub(n) + 1) as f64;
    let log_r: Vec<T> = (0..=m)
        .map(|i| if i < m { T::zero() } else { Float::ln(T::cast(row_slack)) })
        .collect();
    let log_c: Vec<T> = (0..=n)
        .map(|j| if j < n { T::zero() } else { Float::ln(T::cast(col_slack)) })
        .collect();

    let bounded = z.iter().all(|v| Float::abs(*v) <= T::cast(30.0));
    if bounded {
        sinkhorn_scaling(&z, &log_r, &log_c, iterations)
    } else {
        sinkhorn_log(&z, &log_r, &log_c, iterations)
    }
}

fn sinkhorn_scaling<T: Scalar>(
    z: &DMatrix<T>,
    log_r: &[T],
    log_c: &[T],
    iterations: usize,
) -> DMatrix<T> {
    let (rows, cols) = z.shape();
    let k = z.map(|v| Float::exp(v));
    let r: Vec<T> = log_r.iter().map(|v| Float::exp(*v)).collect();
    let c: Vec<T> = log_c.iter().map(|v| Float::exp(*v)).collect();
    let mut u = vec![T::one(); rows];
    let mut v = vec![T::one(); cols];
    for _ in 0..iterations {
        for i in 0..rows {
            let mut acc = T::zero();
            for j in 0..cols {
                acc = acc + k[(i, j)] * v[j];
            }
            u[i] = r[i] / acc;
        }
        for j in 0..cols {
            let mut acc = T::zero();
            for i in 0..rows {
                acc = acc + k[(i, j)] * u[i];
            }
            v[j] = c[j] / acc;
        }
    }
    DMatrix::from_fn(rows, cols, |i, j| u[i] * k[(i, j)] * v[j])
}

fn sinkhorn_log<T: Scalar>(
    z: &DMatrix<T>,
    log_r: &[T],
    log_c: &[T],
    iterations: usize,
) -> DMatrix<T> {
    let (rows, cols) = z.shape();
    let mut u = vec![T::zero(); rows];
    let mut v = vec![T::zero(); cols];
    let mut buf = vec![T::zero(); rows.max(cols)];
    for _ in 0..iterations {
        for i in 0..rows {
            for j in 0..cols {
                buf[j] = z[(i, j)] + v[j];
            }
            u[i] = log_r[i] - log_sum_exp(&buf[..cols]);
        }
        for j in 0..cols {
            for i in 0..rows {
                buf[i] = z[(i, j)] + u[i];
            }
            v[j] = log_c[j] - log_sum_exp(&buf[..rows]);
        }
    }
    DMatrix::from_fn(rows, cols, |i, j| Float::exp(z[(i, j)] + u[i] + v[j]))
}

fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| Float::max(a, b));
    if !Float::is_finite(max) {
        return max;
    }
    let sum = xs
        .iter()
        .fold(T::zero(), |acc, x| acc + Float::exp(*x - max));
    max + Float::ln(sum)
}

/// Sinkhorn-normalizes a score matrix against a dustbin row/column and
/// returns the real `m×n` transport block.
pub fn sinkhorn_normalize<T: Scalar>(
    scores: &DMatrix<T>,
    iterations: usize,
    dustbin_logit: T,
) -> DMatrix<T> {
    let (m, n) = scores.shape();
    let full = sinkhorn_augmented(scores, iterations, dustbin_logit);
    full.view((0, 0), (m, n)).into_owned()
}

/// Matches two node sets: Gaussian feature similarity, Sinkhorn
/// normalization, then the `k` highest-mass node pairs (ties to the
/// lexicographically lowest index pair). Weights are transport masses.
pub fn coarse_match<T: Scalar>(
    src_nodes: &PointCloud<T>,
    tgt_nodes: &PointCloud<T>,
    k: usize,
) -> Result<CorrespondenceSet<T>, T> {
    coarse_match_with(src_nodes, tgt_nodes, k, &MatchParams::default())
}

/// [`coarse_match`] with explicit matching parameters.
pub fn coarse_match_with<T: Scalar>(
    src_nodes: &PointCloud<T>,
    tgt_nodes: &PointCloud<T>,
    k: usize,
    params: &MatchParams<T>,
) -> Result<CorrespondenceSet<T>, T> {
    params.validate()?;
    if k == 0 {
        return Err(Error::InvalidConfig("coarse match needs k ≥ 1".into()));
    }
    if src_nodes.is_empty() || tgt_nodes.is_empty() {
        return Ok(CorrespondenceSet::empty());
    }
    let sim = similarity_logits(src_nodes, tgt_nodes, params.kernel_scale, "coarse matching")?;
    let transport = sinkhorn_normalize(&sim, params.sinkhorn_iterations, params.dustbin_logit);

    let (m, n) = transport.shape();
    let mut cells: Vec<(T, usize, usize)> = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            cells.push((transport[(i, j)], i, j));
        }
    }
    cells.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite transport mass")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    cells.truncate(k.min(m * n));

    let pairs: Vec<(usize, usize)> = cells.iter().map(|&(_, i, j)| (i, j)).collect();
    let weights: Vec<T> = cells
        .iter()
        .map(|&(w, _, _)| nalgebra::clamp(w, T::zero(), T::one()))
        .collect();
    CorrespondenceSet::new(pairs, weights, m, n)
}

/// Assigns each fine-level point to its nearest node and caps every patch
/// at the `cap` members closest to the node (exact ties to lower index).
pub fn group_points<T: Scalar>(
    pyramid: &SamplingPyramid<T>,
    node_level: usize,
    fine_level: usize,
    cap: usize,
) -> Result<PatchAssignment, T> {
    if node_level <= fine_level {
        return Err(Error::InvalidConfig(format!(
            "node level {node_level} must be coarser than fine level {fine_level}"
        )));
    }
    if node_level >= pyramid.num_levels() {
        return Err(Error::InvalidConfig(format!(
            "node level {node_level} out of range for {} levels",
            pyramid.num_levels()
        )));
    }
    if cap == 0 {
        return Err(Error::InvalidConfig("patch cap must be ≥ 1".into()));
    }
    let nodes = pyramid.level(node_level);
    let fine = pyramid.level(fine_level);
    if nodes.is_empty() {
        return Err(Error::EmptyPyramidLevel { level: node_level });
    }
    if fine.is_empty() {
        return Err(Error::EmptyPyramidLevel { level: fine_level });
    }
    assign_patches(nodes, fine, pyramid.voxel_of_level(node_level), cap)
}

/// Point-to-node grouping for an explicit node cloud (used by the local
/// stages, whose refined nodes are not a pyramid level).
pub fn assign_patches<T: Scalar>(
    nodes: &PointCloud<T>,
    fine: &PointCloud<T>,
    node_spacing: T,
    cap: usize,
) -> Result<PatchAssignment, T> {
    let finder = SpatialIndex::new(nodes.points(), Float::max(node_spacing, T::cast(1e-9)))?;
    let mut members: Vec<Vec<(T, usize)>> = vec![Vec::new(); nodes.len()];
    for (i, p) in fine.points().iter().enumerate() {
        let node = finder.nearest(p).expect("node cloud is nonempty");
        members[node].push(((nodes.point(node) - p).norm(), i));
    }
    let members = members
        .into_iter()
        .map(|mut list| {
            list.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
            list.truncate(cap);
            list.into_iter().map(|(_, i)| i).collect()
        })
        .collect();
    Ok(PatchAssignment { members })
}

/// Matches two patches point-to-point: Gaussian similarity, Sinkhorn with
/// dustbins, then mutual-argmax selection over the augmented matrix (a
/// pair survives only if each endpoint is the other's best option,
/// dustbins included). Indices are patch-local.
pub fn fine_match<T: Scalar>(
    src_patch: &PointCloud<T>,
    tgt_patch: &PointCloud<T>,
    params: &MatchParams<T>,
) -> Result<CorrespondenceSet<T>, T> {
    params.validate()?;
    if src_patch.is_empty() || tgt_patch.is_empty() {
        return Ok(CorrespondenceSet::empty());
    }
    let sim = similarity_logits(src_patch, tgt_patch, params.kernel_scale, "fine matching")?;
    let full = sinkhorn_augmented(&sim, params.sinkhorn_iterations, params.dustbin_logit);
    let (m, n) = sim.shape();

    // Row argmax over real columns + dustbin; column argmax likewise.
    let mut row_best = vec![n; m]; // n = dustbin sentinel
    for i in 0..m {
        let mut best = full[(i, n)];
        let mut best_j = n;
        for j in 0..n {
            if full[(i, j)] > best {
                best = full[(i, j)];
                best_j = j;
            }
        }
        row_best[i] = best_j;
    }
    let mut col_best = vec![m; n];
    for j in 0..n {
        let mut best = full[(m, j)];
        let mut best_i = m;
        for i in 0..m {
            if full[(i, j)] > best {
                best = full[(i, j)];
                best_i = i;
            }
        }
        col_best[j] = best_i;
    }

    let mut pairs = Vec::new();
    let mut weights = Vec::new();
    for i in 0..m {
        let j = row_best[i];
        if j < n && col_best[j] == i {
            pairs.push((i, j));
            weights.push(nalgebra::clamp(full[(i, j)], T::zero(), T::one()));
        }
    }
    CorrespondenceSet::new(pairs, weights, m, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::FeatureSet;
    use nalgebra::Point3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn featured_cloud(features: &[Vec<f64>]) -> PointCloud<f64> {
        let pts: Vec<_> = (0..features.len())
            .map(|i| Point3::new(i as f64, 0.0, 0.0))
            .collect();
        let width = features[0].len();
        let data: Vec<f64> = features.iter().flatten().copied().collect();
        PointCloud::new(pts)
            .unwrap()
            .with_features(FeatureSet::new(width, data).unwrap())
            .unwrap()
    }

    fn orthogonal_features(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut f = vec![0.0; n];
                f[i] = 1.0;
                f
            })
            .collect()
    }

    fn augmented_residual(full: &DMatrix<f64>) -> f64 {
        let (rows, cols) = full.shape();
        let (m, n) = (rows - 1, cols - 1);
        let mut worst: f64 = 0.0;
        for i in 0..m {
            let s: f64 = (0..cols).map(|j| full[(i, j)]).sum();
            worst = worst.max((s - 1.0).abs());
        }
        for j in 0..n {
            let s: f64 = (0..rows).map(|i| full[(i, j)]).sum();
            worst = worst.max((s - 1.0).abs());
        }
        worst
    }

    #[test]
    fn correspondence_set_validates_inputs() {
        assert!(CorrespondenceSet::new(vec![(0, 0)], vec![0.5], 1, 1).is_ok());
        assert!(CorrespondenceSet::new(vec![(1, 0)], vec![0.5], 1, 1).is_err());
        assert!(CorrespondenceSet::new(vec![(0, 0), (0, 0)], vec![0.5, 0.5], 1, 1).is_err());
        assert!(CorrespondenceSet::new(vec![(0, 0)], vec![1.5], 1, 1).is_err());
        assert!(CorrespondenceSet::<f64>::new(vec![(0, 0)], vec![], 1, 1).is_err());
    }

    #[test]
    fn one_by_one_sinkhorn_respects_marginals_with_dustbins() {
        for value in [-3.0, 0.0, 0.4, 7.0] {
            let scores = DMatrix::from_element(1, 1, value);
            let full = sinkhorn_augmented(&scores, 100, 1.0);
            assert!(augmented_residual(&full) < 1e-6, "value {value}");
        }
    }

    #[test]
    fn uniform_scores_give_a_uniform_transport_block() {
        let scores = DMatrix::from_element(4, 4, 0.3);
        let block = sinkhorn_normalize(&scores, 100, 0.3);
        let first = block[(0, 0)];
        for v in block.iter() {
            assert!((v - first).abs() < 1e-6);
        }
    }

    #[test]
    fn random_matrix_marginals_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let scores = DMatrix::from_fn(8, 6, |_, _| rng.random_range(-2.0..2.0));
        let full = sinkhorn_augmented(&scores, 100, 1.0);
        assert!(augmented_residual(&full) < 1e-6);
    }

    #[test]
    fn log_and_scaling_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores = DMatrix::from_fn(5, 7, |_, _| rng.random_range(-2.0..2.0));
        // 5×7: dustbin row absorbs 7−5+1 = 3, dustbin column 1.
        let log_r: Vec<f64> = (0..6).map(|i| if i < 5 { 0.0 } else { (3f64).ln() }).collect();
        let log_c: Vec<f64> = (0..8).map(|j| if j < 7 { 0.0 } else { 0.0 }).collect();
        let z = DMatrix::from_fn(6, 8, |i, j| if i < 5 && j < 7 { scores[(i, j)] } else { 1.0 });
        let a = sinkhorn_scaling(&z, &log_r, &log_c, 80);
        let b = sinkhorn_log(&z, &log_r, &log_c, 80);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn huge_scores_stay_finite_via_the_log_path() {
        let scores = DMatrix::from_fn(3, 3, |i, j| if i == j { 500.0 } else { -500.0 });
        let full = sinkhorn_augmented(&scores, 100, 1.0);
        assert!(full.iter().all(|v| v.is_finite() && *v >= 0.0));
        // Columns were updated last, so they end exactly feasible. Row
        // sums legitimately stall slightly short of 1: with ±500 logits
        // the row slack couples to the rest only through ~e^{-500}
        // cells, which double precision cannot move.
        for j in 0..3 {
            let s: f64 = (0..4).map(|i| full[(i, j)]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        for i in 0..3 {
            let s: f64 = (0..4).map(|j| full[(i, j)]).sum();
            assert!((s - 1.0).abs() < 0.01);
            assert!(full[(i, i)] > 0.9, "diagonal must dominate");
        }
    }

    #[test]
    fn marginal_residuals_shrink_with_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let scores = DMatrix::from_fn(7, 5, |_, _| rng.random_range(-3.0..3.0));
            let residuals: Vec<f64> = [10, 50, 100]
                .iter()
                .map(|&iters| augmented_residual(&sinkhorn_augmented(&scores, iters, 1.0)))
                .collect();
            assert!(residuals[0] >= residuals[1] && residuals[1] >= residuals[2], "{residuals:?}");
        }
    }

    #[test]
    fn identical_node_sets_match_diagonally() {
        let nodes = featured_cloud(&orthogonal_features(5));
        let m = coarse_match(&nodes, &nodes, 5).unwrap();
        let mut pairs = m.pairs().to_vec();
        pairs.sort_unstable();
        assert_eq!(pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]);
    }

    #[test]
    fn k_one_returns_the_argmax_of_the_normalized_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let feats: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let src = featured_cloud(&feats[..3].to_vec());
        let tgt = featured_cloud(&feats[2..].to_vec());
        let sim = similarity_logits(&src, &tgt, 1.0, "test").unwrap();
        let transport = sinkhorn_normalize(&sim, 100, 1.0);
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for i in 0..3 {
            for j in 0..4 {
                if transport[(i, j)] > best.0 {
                    best = (transport[(i, j)], i, j);
                }
            }
        }
        let m = coarse_match(&src, &tgt, 1).unwrap();
        assert_eq!(m.pairs(), &[(best.1, best.2)]);
    }

    #[test]
    fn k_larger_than_the_matrix_clamps_to_all_pairs() {
        let nodes = featured_cloud(&orthogonal_features(3));
        let m = coarse_match(&nodes, &nodes, 1000).unwrap();
        assert_eq!(m.len(), 9);
    }

    #[test]
    fn coarse_match_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let feats: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let tgt = featured_cloud(&feats);
        let src = featured_cloud(&feats);
        let base = coarse_match(&src, &tgt, 4).unwrap();

        let perm = [3usize, 0, 4, 1, 5, 2];
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| feats[i].clone()).collect();
        let src_shuffled = featured_cloud(&shuffled);
        let moved = coarse_match(&src_shuffled, &tgt, 4).unwrap();

        // position of original index i in the shuffled cloud
        let mut inverse = [0usize; 6];
        for (new_idx, &old_idx) in perm.iter().enumerate() {
            inverse[old_idx] = new_idx;
        }
        let mut expect: Vec<(usize, usize)> =
            base.pairs().iter().map(|&(s, t)| (inverse[s], t)).collect();
        let mut got = moved.pairs().to_vec();
        expect.sort_unstable();
        got.sort_unstable();
        assert_eq!(expect, got);
    }

    #[test]
    fn grouping_matches_brute_force_partition_when_uncapped() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<_> = (0..120)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let pyramid = crate::pyramid::build_pyramid(&cloud, 0.4, 2).unwrap();
        let assignment = group_points(&pyramid, 2, 0, usize::MAX >> 1).unwrap();

        let nodes = pyramid.level(2);
        let fine = pyramid.level(0);
        for (i, p) in fine.points().iter().enumerate() {
            let dist = |a: &Point3<f64>| (a - p).norm();
            let nearest = nodes
                .points()
                .iter()
                .enumerate()
                .min_by(|(ai, a), (bi, b)| {
                    dist(a).partial_cmp(&dist(b)).unwrap().then(ai.cmp(bi))
                })
                .unwrap()
                .0;
            assert!(assignment.members(nearest).contains(&i));
        }
        let total: usize = (0..assignment.node_count())
            .map(|n| assignment.members(n).len())
            .sum();
        assert_eq!(total, fine.len());
    }

    #[test]
    fn single_node_takes_the_cap_nearest_points() {
        let pts: Vec<_> = (0..10).map(|i| Point3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        let cloud = PointCloud::new(pts).unwrap();
        let pyramid = crate::pyramid::build_pyramid(&cloud, 1.0, 2).unwrap();
        assert_eq!(pyramid.level(2).len(), 1);
        let assignment = group_points(&pyramid, 2, 0, 4).unwrap();
        assert_eq!(assignment.members(0).len(), 4);
    }

    #[test]
    fn grouping_validates_levels() {
        let cloud = PointCloud::new(vec![Point3::origin()]).unwrap();
        let pyramid = crate::pyramid::build_pyramid(&cloud, 0.1, 2).unwrap();
        assert!(group_points(&pyramid, 0, 2, 8).is_err());
        assert!(group_points(&pyramid, 5, 0, 8).is_err());
        assert!(group_points(&pyramid, 2, 0, 0).is_err());
    }

    #[test]
    fn identical_patches_pair_identically_with_dominant_weights() {
        let patch = featured_cloud(&orthogonal_features(6));
        let m = fine_match(&patch, &patch, &MatchParams::default()).unwrap();
        assert_eq!(m.len(), 6);
        for (i, &(s, t)) in m.pairs().iter().enumerate() {
            assert_eq!(s, t);
            assert!(m.weights()[i] > 0.0);
        }
        // Every kept weight dominates its row and column of the transport.
        let sim = similarity_logits(&patch, &patch, 1.0, "test").unwrap();
        let block = sinkhorn_normalize(&sim, 100, 1.0);
        for &(s, t) in m.pairs() {
            for j in 0..6 {
                if j != t {
                    assert!(block[(s, t)] > block[(s, j)]);
                }
                if j != s {
                    assert!(block[(s, t)] > block[(j, t)]);
                }
            }
        }
    }

    #[test]
    fn corrupted_point_scores_below_the_median_inlier_weight() {
        let mut feats = orthogonal_features(8);
        let src_feats = {
            let mut f = feats.clone();
            // Corrupt source point 3 with an off-axis feature.
            f[3] = vec![0.31; 8];
            f
        };
        feats.truncate(8);
        let src = featured_cloud(&src_feats);
        let tgt = featured_cloud(&feats);
        let m = fine_match(&src, &tgt, &MatchParams::default()).unwrap();
        let mut inlier_weights: Vec<f64> = Vec::new();
        let mut corrupted_weight = None;
        for (s, _, w) in m.iter() {
            if s == 3 {
                corrupted_weight = Some(w);
            } else {
                inlier_weights.push(w);
            }
        }
        inlier_weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = inlier_weights[inlier_weights.len() / 2];
        if let Some(w) = corrupted_weight {
            assert!(w < median, "corrupted weight {w} not below median {median}");
        }
        // The corrupted point must not displace the true pairings.
        for (s, t, _) in m.iter() {
            if s != 3 {
                assert_eq!(s, t);
            }
        }
    }

    #[test]
    fn garbage_similarities_route_to_the_dustbin() {
        // Disjoint one-hot axes: every cross distance is √2, nothing is
        // confident, the dustbin dominates, mutual selection is empty.
        let src_feats: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                let mut f = vec![0.0; 8];
                f[i] = 1.0;
                f
            })
            .collect();
        let tgt_feats: Vec<Vec<f64>> = (4..7)
            .map(|i| {
                let mut f = vec![0.0; 8];
                f[i] = 1.0;
                f
            })
            .collect();
        let src = featured_cloud(&src_feats);
        let tgt = featured_cloud(&tgt_feats);
        let m = fine_match(&src, &tgt, &MatchParams::default()).unwrap();
        assert!(m.is_empty(), "expected empty set, got {:?}", m.pairs());
    }

    #[test]
    fn all_emitted_weights_lie_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let fs: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let ft: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let src = featured_cloud(&fs);
            let tgt = featured_cloud(&ft);
            let coarse = coarse_match(&src, &tgt, 16).unwrap();
            let fine = fine_match(&src, &tgt, &MatchParams::default()).unwrap();
            for w in coarse.weights().iter().chain(fine.weights()) {
                assert!((0.0..=1.0).contains(w));
            }
        }
    }
}
