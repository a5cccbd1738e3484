//! Registration quality metrics and forward evaluation losses.
//!
//! Everything here is a pure scalar function over already-computed
//! results: translation/rotation/alignment errors per pair, recall over a
//! batch, and the two training-style losses (overlap-aware circle loss,
//! assignment negative log-likelihood) evaluated forward-only for
//! regression testing. Nothing in this module runs the pipeline.

use nalgebra::DMatrix;
use num_traits::Float;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::matching::CorrespondenceSet;
use crate::scalar::Scalar;
use crate::transform::RigidTransform;

/// Pass criteria applied by [`registration_recall`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig<T: Scalar> {
    /// Alignment RMSE below which a pair counts as registered (meters).
    pub rmse_threshold: T,
    /// Rotation-error bound for pose-based recall (degrees).
    pub rre_threshold: T,
    /// Translation-error bound for pose-based recall (meters).
    pub rte_threshold: T,
}

impl<T: Scalar> Default for MetricConfig<T> {
    fn default() -> Self {
        Self {
            rmse_threshold: T::cast(0.2),
            rre_threshold: T::cast(5.0),
            rte_threshold: T::cast(2.0),
        }
    }
}

impl<T: Scalar> MetricConfig<T> {
    /// Checks that every threshold is positive and finite.
    pub fn validate(&self) -> Result<(), T> {
        for (name, v) in [
            ("rmse_threshold", self.rmse_threshold),
            ("rre_threshold", self.rre_threshold),
            ("rte_threshold", self.rte_threshold),
        ] {
            if !(v > T::zero()) || !Float::is_finite(v) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {}",
                    v.as_f64()
                )));
            }
        }
        Ok(())
    }
}

/// Hyper-parameters for the evaluation losses.
///
/// `gt_sample_count` and `matching_radius` parameterize how callers build
/// loss instances (how many ground-truth node correspondences to sample
/// and which point pairs count as matched); the loss formulas themselves
/// only read the margins, the overlap floor, and the loss weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig<T: Scalar> {
    /// Positive margin Δ_p of the circle loss.
    pub margin_positive: T,
    /// Negative margin Δ_n of the circle loss.
    pub margin_negative: T,
    /// Positives with overlap ratio below this floor are ignored.
    pub overlap_floor: T,
    /// Weight λ of the matching loss in [`combined_loss`].
    pub loss_weight: T,
    /// How many ground-truth node correspondences a harness samples per
    /// pair when building matching-loss instances.
    pub gt_sample_count: usize,
    /// Point-pair distance under the ground-truth transform below which
    /// two patch points count as matched (meters).
    pub matching_radius: T,
}

impl<T: Scalar> Default for LossConfig<T> {
    fn default() -> Self {
        Self {
            margin_positive: T::cast(1.4),
            margin_negative: T::cast(0.1),
            overlap_floor: T::cast(0.1),
            loss_weight: T::one(),
            gt_sample_count: 128,
            matching_radius: T::cast(0.05),
        }
    }
}

impl<T: Scalar> LossConfig<T> {
    /// Checks margin ordering (Δ_p > Δ_n > 0) and value domains.
    pub fn validate(&self) -> Result<(), T> {
        if !(self.margin_negative > T::zero())
            || !(self.margin_positive > self.margin_negative)
            || !Float::is_finite(self.margin_positive)
        {
            return Err(Error::InvalidConfig(format!(
                "margins must satisfy margin_positive > margin_negative > 0, got {} and {}",
                self.margin_positive.as_f64(),
                self.margin_negative.as_f64()
            )));
        }
        if !(self.overlap_floor >= T::zero()) || !(self.overlap_floor < T::one()) {
            return Err(Error::InvalidConfig(format!(
                "overlap_floor must lie in [0, 1), got {}",
                self.overlap_floor.as_f64()
            )));
        }
        if !(self.loss_weight >= T::zero()) || !Float::is_finite(self.loss_weight) {
            return Err(Error::InvalidConfig(format!(
                "loss_weight must be non-negative and finite, got {}",
                self.loss_weight.as_f64()
            )));
        }
        if self.gt_sample_count == 0 {
            return Err(Error::InvalidConfig(
                "gt_sample_count must be at least 1".into(),
            ));
        }
        if !(self.matching_radius > T::zero()) || !Float::is_finite(self.matching_radius) {
            return Err(Error::InvalidConfig(format!(
                "matching_radius must be positive and finite, got {}",
                self.matching_radius.as_f64()
            )));
        }
        Ok(())
    }
}

/// Per-pair registration errors, ready for recall aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMetrics<T: Scalar> {
    /// Rotation error in degrees.
    pub rre_degrees: T,
    /// Translation error in meters.
    pub rte: T,
    /// Alignment RMSE over the ground-truth correspondences in meters.
    pub rmse: T,
}

/// Which criterion [`registration_recall`] counts a pair as registered by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecallMode {
    /// Indoor criterion: alignment RMSE strictly below the threshold.
    RmseBased,
    /// Outdoor criterion: rotation and translation errors both strictly
    /// below their thresholds.
    PoseBased,
}

/// Euclidean distance between the two translation vectors.
pub fn rte<T: Scalar>(est: &RigidTransform<T>, gt: &RigidTransform<T>) -> T {
    (est.translation() - gt.translation()).norm()
}

/// Angular difference between the two rotations, in degrees.
///
/// The angle is arccos((trace(R_estᵀ·R_gt) − 1) / 2) with the argument
/// clamped so the result lies in [0°, 180°] and is never NaN even when
/// floating-point error pushes it past the valid range. Evaluating the
/// trace directly loses half the significant digits near 0°, so the
/// equivalent ‖R_est − R_gt‖_F = 2√2·sin(θ/2) form is used instead:
/// identical rotations measure exactly 0°.
pub fn rre<T: Scalar>(est: &RigidTransform<T>, gt: &RigidTransform<T>) -> T {
    let diff = est.rotation() - gt.rotation();
    let sin_half = Float::min(diff.norm() / Float::sqrt(T::cast(8.0)), T::one());
    let two = T::cast(2.0);
    two * Float::asin(sin_half) * T::cast(180.0) / T::pi()
}

/// Root-mean-square alignment error of `est` over ground-truth
/// correspondences: √(1/|C| · Σ ‖est(src_i) − tgt_j‖²).
///
/// Errors with [`Error::EmptyMetric`] when the set is empty and
/// [`Error::InvalidConfig`] when its indices do not fit the clouds.
pub fn rmse<T: Scalar>(
    corr: &CorrespondenceSet<T>,
    src: &PointCloud<T>,
    tgt: &PointCloud<T>,
    est: &RigidTransform<T>,
) -> Result<T, T> {
    if corr.is_empty() {
        return Err(Error::EmptyMetric("alignment rmse"));
    }
    let mut acc = T::zero();
    for &(i, j) in corr.pairs() {
        if i >= src.len() || j >= tgt.len() {
            return Err(Error::InvalidConfig(format!(
                "correspondence ({i}, {j}) exceeds cloud sizes {} and {}",
                src.len(),
                tgt.len()
            )));
        }
        acc += (est.apply_point(&src.point(i)) - tgt.point(j)).norm_squared();
    }
    Ok(Float::sqrt(acc / T::cast(corr.len() as f64)))
}

/// Bundles all three per-pair errors for one registration result.
pub fn pair_metrics<T: Scalar>(
    est: &RigidTransform<T>,
    gt: &RigidTransform<T>,
    corr: &CorrespondenceSet<T>,
    src: &PointCloud<T>,
    tgt: &PointCloud<T>,
) -> Result<PairMetrics<T>, T> {
    Ok(PairMetrics {
        rre_degrees: rre(est, gt),
        rte: rte(est, gt),
        rmse: rmse(corr, src, tgt, est)?,
    })
}

/// Fraction of pairs that satisfy the mode's strict-inequality criterion.
///
/// Errors with [`Error::EmptyMetric`] on an empty result list: recall over
/// nothing is undefined, not zero.
pub fn registration_recall<T: Scalar>(
    results: &[PairMetrics<T>],
    mode: RecallMode,
    config: &MetricConfig<T>,
) -> Result<T, T> {
    config.validate()?;
    if results.is_empty() {
        return Err(Error::EmptyMetric("registration recall"));
    }
    let passed = results
        .iter()
        .filter(|m| match mode {
            RecallMode::RmseBased => m.rmse < config.rmse_threshold,
            RecallMode::PoseBased => {
                m.rre_degrees < config.rre_threshold && m.rte < config.rte_threshold
            }
        })
        .count();
    Ok(T::cast(passed as f64) / T::cast(results.len() as f64))
}

/// One anchor patch's view of the circle loss: feature distances to its
/// positive candidates (with overlap ratios) and to its negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleLossAnchor<T: Scalar> {
    /// (feature distance, overlap ratio in [0, 1]) per positive candidate.
    pub positives: Vec<(T, T)>,
    /// Feature distance per negative candidate.
    pub negatives: Vec<T>,
}

/// Overlap-aware circle loss over a set of anchor patches.
///
/// Per anchor the loss is log(1 + Σ_pos e^{√o·β_p·(d−Δ_p)} · Σ_neg
/// e^{β_n·(Δ_n−d)}) with hinge weights β_p = max(0, d−Δ_p) and β_n =
/// max(0, Δ_n−d); positives whose overlap ratio falls below
/// `config.overlap_floor` are skipped. The result is the mean over
/// anchors; an empty anchor set yields 0 by convention, as does an anchor
/// with no surviving positives or no negatives (its product term
/// vanishes).
pub fn circle_loss<T: Scalar>(
    anchors: &[CircleLossAnchor<T>],
    config: &LossConfig<T>,
) -> Result<T, T> {
    config.validate()?;
    if anchors.is_empty() {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    for anchor in anchors {
        let mut pos_sum = T::zero();
        for &(d, o) in &anchor.positives {
            if !Float::is_finite(d) || d < T::zero() {
                return Err(Error::InvalidConfig(format!(
                    "positive feature distance must be non-negative and finite, got {}",
                    d.as_f64()
                )));
            }
            if !Float::is_finite(o) || o < T::zero() || o > T::one() {
                return Err(Error::InvalidConfig(format!(
                    "overlap ratio must lie in [0, 1], got {}",
                    o.as_f64()
                )));
            }
            if o < config.overlap_floor {
                continue;
            }
            let hinge = Float::max(T::zero(), d - config.margin_positive);
            pos_sum += Float::exp(Float::sqrt(o) * hinge * (d - config.margin_positive));
        }
        let mut neg_sum = T::zero();
        for &d in &anchor.negatives {
            if !Float::is_finite(d) || d < T::zero() {
                return Err(Error::InvalidConfig(format!(
                    "negative feature distance must be non-negative and finite, got {}",
                    d.as_f64()
                )));
            }
            let hinge = Float::max(T::zero(), config.margin_negative - d);
            neg_sum += Float::exp(hinge * (config.margin_negative - d));
        }
        total += Float::ln(T::one() + pos_sum * neg_sum);
    }
    Ok(total / T::cast(anchors.len() as f64))
}

/// One sampled node correspondence's dustbin-augmented assignment matrix
/// together with its ground-truth matching structure.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingLossInstance<T: Scalar> {
    /// (m+1) × (n+1) transport matrix for a patch pair with m source and
    /// n target points; the last row and column are the dustbins.
    pub assignment: DMatrix<T>,
    /// Interior cells (source row, target column) that should carry mass.
    pub matched: Vec<(usize, usize)>,
    /// Source rows whose mass should land in the dustbin column.
    pub unmatched_src: Vec<usize>,
    /// Target columns whose mass should land in the dustbin row.
    pub unmatched_tgt: Vec<usize>,
}

/// Result of [`point_matching_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingLoss<T: Scalar> {
    /// Mean negative log-likelihood over the instances.
    pub value: T,
    /// True when some required entry was 0 (or below 1e-12) and had to be
    /// clamped to keep the logarithm finite.
    pub clamped: bool,
}

/// Negative log-likelihood of the ground-truth assignment under each
/// instance's transport matrix, averaged over instances.
///
/// Per instance the loss sums −log over the matched interior cells, the
/// dustbin-column cells of unmatched source rows, and the dustbin-row
/// cells of unmatched target columns. Entries below 1e-12 are clamped
/// (reported via [`MatchingLoss::clamped`]) so the value stays finite.
/// Errors with [`Error::EmptyMetric`] on an empty instance list.
pub fn point_matching_loss<T: Scalar>(
    instances: &[MatchingLossInstance<T>],
) -> Result<MatchingLoss<T>, T> {
    if instances.is_empty() {
        return Err(Error::EmptyMetric("point matching loss"));
    }
    let floor = T::cast(1e-12);
    let mut clamped = false;
    let mut read = |m: &DMatrix<T>, r: usize, c: usize| -> Result<T, T> {
        let v = m[(r, c)];
        if !Float::is_finite(v) || v < T::zero() {
            return Err(Error::InvalidConfig(format!(
                "assignment entry ({r}, {c}) must be non-negative and finite, got {}",
                v.as_f64()
            )));
        }
        if v < floor {
            clamped = true;
            return Ok(floor);
        }
        Ok(v)
    };
    let mut total = T::zero();
    for inst in instances {
        let (rows, cols) = (inst.assignment.nrows(), inst.assignment.ncols());
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidConfig(format!(
                "assignment matrix must be at least 2x2 (one point plus dustbins), got {rows}x{cols}"
            )));
        }
        let (m, n) = (rows - 1, cols - 1);
        let mut inst_loss = T::zero();
        for &(x, y) in &inst.matched {
            if x >= m || y >= n {
                return Err(Error::InvalidConfig(format!(
                    "matched cell ({x}, {y}) lies outside the {m}x{n} interior"
                )));
            }
            inst_loss -= Float::ln(read(&inst.assignment, x, y)?);
        }
        for &x in &inst.unmatched_src {
            if x >= m {
                return Err(Error::InvalidConfig(format!(
                    "unmatched source row {x} exceeds {m} rows"
                )));
            }
            inst_loss -= Float::ln(read(&inst.assignment, x, n)?);
        }
        for &y in &inst.unmatched_tgt {
            if y >= n {
                return Err(Error::InvalidConfig(format!(
                    "unmatched target column {y} exceeds {n} columns"
                )));
            }
            inst_loss -= Float::ln(read(&inst.assignment, m, y)?);
        }
        total += inst_loss;
    }
    Ok(MatchingLoss {
        value: total / T::cast(instances.len() as f64),
        clamped,
    })
}

/// Combined evaluation loss: circle loss plus `loss_weight` times the
/// matching loss.
pub fn combined_loss<T: Scalar>(circle: T, matching: T, config: &LossConfig<T>) -> T {
    circle + config.loss_weight * matching
}
