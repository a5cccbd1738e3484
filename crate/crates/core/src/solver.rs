//! Closed-form weighted alignment and local-to-global registration.
//!
//! Each patch's correspondences yield a candidate rigid transform via
//! weighted SVD; the candidate with the most inliers over the full
//! correspondence set wins and is refined by iterative re-fitting on its
//! inlier set.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use num_traits::Float;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::matching::CorrespondenceSet;
use crate::scalar::Scalar;
use crate::transform::RigidTransform;

/// Alignment solver parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T: Scalar> {
    /// Inlier acceptance threshold τ (meters); a pair counts as an inlier
    /// when its residual is strictly below this.
    pub acceptance_threshold: T,
    /// Number of refit-and-reselect rounds after candidate selection.
    pub refinement_rounds: usize,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self { acceptance_threshold: T::cast(0.1), refinement_rounds: 5 }
    }
}

impl<T: Scalar> SolverConfig<T> {
    /// Checks the configuration invariants.
    pub fn validate(&self) -> Result<(), T> {
        if !(self.acceptance_threshold > T::zero()) {
            return Err(Error::InvalidConfig("acceptance threshold must be positive".into()));
        }
        if self.refinement_rounds == 0 {
            return Err(Error::InvalidConfig("refinement rounds must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Solves `argmin_{R,t} Σ w_i ‖R·x_i + t − y_i‖²` in closed form:
/// weighted centroiding, SVD of the weighted cross-covariance, and a
/// reflection fix on the smallest singular direction.
pub fn weighted_kabsch<T: Scalar>(
    src: &[Point3<T>],
    tgt: &[Point3<T>],
    weights: &[T],
) -> Result<RigidTransform<T>, T> {
    if src.len() != tgt.len() || src.len() != weights.len() {
        return Err(Error::InvalidConfig(format!(
            "mismatched alignment inputs: {} src, {} tgt, {} weights",
            src.len(),
            tgt.len(),
            weights.len()
        )));
    }
    let mut total = T::zero();
    let mut effective = 0usize;
    for &w in weights {
        if !Float::is_finite(w) || w < T::zero() {
            return Err(Error::InvalidConfig(format!("weight {w} is not a finite nonnegative")));
        }
        if w > T::zero() {
            effective += 1;
        }
        total = total + w;
    }
    if effective < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "alignment needs ≥ 3 positively weighted pairs, got {effective}"
        )));
    }

    let mut src_bar = Vector3::zeros();
    let mut tgt_bar = Vector3::zeros();
    for ((x, y), &w) in src.iter().zip(tgt).zip(weights) {
        src_bar += x.coords * w;
        tgt_bar += y.coords * w;
    }
    src_bar /= total;
    tgt_bar /= total;

    let mut h = Matrix3::zeros();
    for ((x, y), &w) in src.iter().zip(tgt).zip(weights) {
        let xc = x.coords - src_bar;
        let yc = y.coords - tgt_bar;
        h += (xc * yc.transpose()) * w;
    }

    let svd = h.svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let v = svd.v_t.expect("svd with v_t requested").transpose();
    let s = &svd.singular_values;
    let mut smallest = 0usize;
    for i in 1..3 {
        if s[i] < s[smallest] {
            smallest = i;
        }
    }
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    // Collinear or coincident point sets leave the cross-covariance with
    // rank < 2 and the rotation underdetermined.
    if !(sorted[0] > T::zero()) || sorted[1] <= sorted[0] * Float::sqrt(Float::epsilon()) {
        return Err(Error::DegenerateGeometry(
            "cross-covariance is rank-deficient (collinear or coincident points)".into(),
        ));
    }

    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < T::zero() {
        d[(smallest, smallest)] = -T::one();
    }
    let mut rotation = v * d * u.transpose();

    // The small-matrix SVD leaves ~√ε of error in the singular vectors,
    // visible as ~1e-6 degrees of rotation error even on exact data. A few
    // Newton steps on SO(3) for max tr(R·H) (the same objective) converge
    // quadratically from that start and pin the estimate to the optimizer.
    for _ in 0..3 {
        let a = rotation * h;
        let grad = Vector3::new(
            a[(1, 2)] - a[(2, 1)],
            a[(2, 0)] - a[(0, 2)],
            a[(0, 1)] - a[(1, 0)],
        );
        let hessian = Matrix3::identity() * a.trace() - (a + a.transpose()) * T::cast(0.5);
        let Some(inverse) = hessian.try_inverse() else { break };
        let omega = inverse * grad;
        let step = omega.norm();
        // A near-singular Hessian (reflection with two equal singular
        // values) can propose a wild step; the SVD answer is already close,
        // so only accept small corrections.
        if !Float::is_finite(step) || step > T::cast(1e-3) {
            break;
        }
        rotation = Rotation3::new(omega).into_inner() * rotation;
        if step <= <T as Float>::epsilon() {
            break;
        }
    }

    let translation = tgt_bar - rotation * src_bar;
    RigidTransform::try_new(rotation, translation)
}

/// Counts correspondences whose residual under `transform` is strictly
/// below `tau`.
pub fn count_inliers<T: Scalar>(
    transform: &RigidTransform<T>,
    corr: &CorrespondenceSet<T>,
    src: &PointCloud<T>,
    tgt: &PointCloud<T>,
    tau: T,
) -> usize {
    corr.pairs()
        .iter()
        .filter(|&&(s, t)| {
            (transform.apply_point(&src.point(s)) - tgt.point(t)).norm() < tau
        })
        .count()
}

/// Positions of the correspondences whose residual is strictly below
/// `tau`, in correspondence order.
fn inlier_positions<T: Scalar>(
    transform: &RigidTransform<T>,
    corr: &CorrespondenceSet<T>,
    src: &PointCloud<T>,
    tgt: &PointCloud<T>,
    tau: T,
) -> Vec<usize> {
    corr.pairs()
        .iter()
        .enumerate()
        .filter(|&(_, &(s, t))| {
            (transform.apply_point(&src.point(s)) - tgt.point(t)).norm() < tau
        })
        .map(|(i, _)| i)
        .collect()
}

fn solve_correspondences<T: Scalar>(
    corr: &CorrespondenceSet<T>,
    src: &PointCloud<T>,
    tgt: &PointCloud<T>,
) -> Result<RigidTransform<T>, T> {
    let xs: Vec<Point3<T>> = corr.pairs().iter().map(|&(s, _)| src.point(s)).collect();
    let ys: Vec<Point3<T>> = corr.pairs().iter().map(|&(_, t)| tgt.point(t)).collect();
    weighted_kabsch(&xs, &ys, corr.weights())
}

/// Local-to-global registration.
///
/// Solves one weighted alignment per patch (correspondences index into
/// `src`/`tgt`; weights are the pairs' match similarities), selects the
/// candidate with the most inliers over `all_corrs` (ties to the lowest
/// patch index), then runs `refinement_rounds` rounds of refit-on-inliers
/// followed by inlier re-selection. Returns the final transform and its
/// surviving inlier set.
pub fn local_to_global<T: Scalar>(
    patch_corrs: &[CorrespondenceSet<T>],
    all_corrs: &CorrespondenceSet<T>,
    src: &PointCloud<T>,
    tgt: &PointCloud<T>,
    config: &SolverConfig<T>,
) -> Result<(RigidTransform<T>, CorrespondenceSet<T>), T> {
    config.validate()?;
    let tau = config.acceptance_threshold;

    let mut best: Option<(usize, RigidTransform<T>)> = None;
    let mut best_count = 0usize;
    let mut skipped = 0usize;
    for (idx, patch) in patch_corrs.iter().enumerate() {
        if patch.len() < 3 {
            skipped += 1;
            continue;
        }
        let candidate = match solve_correspondences(patch, src, tgt) {
            Ok(t) => t,
            Err(Error::DegenerateGeometry(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let count = count_inliers(&candidate, all_corrs, src, tgt, tau);
        if best.is_none() || count > best_count {
            best = Some((idx, candidate));
            best_count = count;
        }
    }
    let (_, mut transform) = best.ok_or_else(|| {
        Error::DegenerateGeometry(format!(
            "no usable alignment candidate: {skipped} of {} patches degenerate or undersized",
            patch_corrs.len()
        ))
    })?;

    let mut inliers = inlier_positions(&transform, all_corrs, src, tgt, tau);
    for _ in 0..config.refinement_rounds {
        if inliers.len() < 3 {
            break;
        }
        let subset = all_corrs.subset(&inliers);
        match solve_correspondences(&subset, src, tgt) {
            Ok(refit) => {
                transform = refit;
                inliers = inlier_positions(&transform, all_corrs, src, tgt, tau);
            }
            // A shrunken inlier set can go collinear; keep the last good fit.
            Err(Error::DegenerateGeometry(_)) => break,
            Err(e) => return Err(e),
        }
    }
    Ok((transform, all_corrs.subset(&inliers)))
}
