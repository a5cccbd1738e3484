//! Spatial-consistency classifier: a pairwise rigidity measure over a
//! correspondence set, its scalar score, and the early-exit decision
//! taken after each registration stage.

use nalgebra::DMatrix;
use num_traits::Float;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::matching::CorrespondenceSet;
use crate::scalar::Scalar;

/// Which registration stage a decision is being made for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// The initial whole-cloud stage.
    Global,
    /// The i-th local refinement stage (1-based).
    Local(usize),
}

/// Outcome of a stage decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    /// The global score cleared its threshold: registration is done.
    ExitSuccess,
    /// Keep iterating.
    Continue,
    /// A local stage regressed: stop and fall back to the best stage.
    ExitDegraded,
}

/// How local stages are judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LocalRule {
    /// Compare the score *change* against the stage threshold (default):
    /// negative thresholds tolerate decline, positive demand improvement.
    Delta,
    /// Compare the raw score against the stage threshold.
    Raw,
}

/// Early-exit classifier parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig<T: Scalar> {
    /// Distance scale σ_d of the consistency kernel (meters).
    pub sigma_d: T,
    /// Global-stage score threshold N_g.
    pub global_threshold: T,
    /// Explicit per-local-stage thresholds; stages past the end reuse the
    /// last entry. `None` generates the schedule from the fields below.
    pub local_thresholds: Option<Vec<T>>,
    /// First local threshold as a fraction of `global_threshold`.
    pub local_start_fraction: T,
    /// Increment between consecutive generated local thresholds.
    pub local_step: T,
    /// Judge local stages by score delta or raw score.
    pub local_rule: LocalRule,
    /// When false the classifier always answers `Continue` (ablation
    /// mode: the pipeline runs to its iteration cap).
    pub enabled: bool,
}

impl<T: Scalar> Default for ClassifierConfig<T> {
    fn default() -> Self {
        Self {
            sigma_d: T::cast(0.1),
            global_threshold: T::cast(200.0),
            local_thresholds: None,
            local_start_fraction: T::cast(0.1),
            local_step: T::cast(10.0),
            local_rule: LocalRule::Delta,
            enabled: true,
        }
    }
}

impl<T: Scalar> ClassifierConfig<T> {
    /// Checks the configuration invariants.
    pub fn validate(&self) -> Result<(), T> {
        if !(self.sigma_d > T::zero()) {
            return Err(Error::InvalidConfig("sigma_d must be positive".into()));
        }
        for v in [self.global_threshold, self.local_start_fraction, self.local_step] {
            if !Float::is_finite(v) {
                return Err(Error::InvalidConfig("classifier thresholds must be finite".into()));
            }
        }
        if let Some(list) = &self.local_thresholds {
            if list.is_empty() {
                return Err(Error::InvalidConfig(
                    "explicit local threshold list must be nonempty".into(),
                ));
            }
            if list.iter().any(|v| !Float::is_finite(*v)) {
                return Err(Error::InvalidConfig("local thresholds must be finite".into()));
            }
        }
        Ok(())
    }

    /// Threshold for local stage `i` (1-based); schedules clamp to their
    /// last entry.
    pub fn local_threshold(&self, i: usize) -> T {
        let i = i.max(1);
        match &self.local_thresholds {
            Some(list) => list[(i - 1).min(list.len() - 1)],
            None => {
                self.local_start_fraction * self.global_threshold
                    + T::cast((i - 1) as f64) * self.local_step
            }
        }
    }
}

/// Classifier output for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SCReport<T: Scalar> {
    /// The pairwise consistency matrix.
    pub sc_matrix: DMatrix<T>,
    /// Its scalar score (max row sum).
    pub score: T,
    /// The stage decision.
    pub decision: Decision,
}

/// Pairwise spatial-consistency matrix: `SC_ij = max(0, 1 − d_ij²/σ_d²)`
/// where `d_ij` is the difference between the pair's source-side and
/// target-side distances. Rigid-consistent correspondences preserve
/// within-cloud distances, so consistent pairs score near 1.
pub fn sc_matrix<T: Scalar>(
    corr: &CorrespondenceSet<T>,
    src: &PointCloud<T>,
    tgt: &PointCloud<T>,
    sigma_d: T,
) -> Result<DMatrix<T>, T> {
    if !(sigma_d > T::zero()) {
        return Err(Error::InvalidConfig("sigma_d must be positive".into()));
    }
    let n = corr.len();
    if n < 2 {
        return Err(Error::UndersizedInput {
            what: "spatial-consistency matrix",
            needed: 2,
            got: n,
            unit: "correspondences",
        });
    }
    let xs: Vec<_> = corr.pairs().iter().map(|&(s, _)| src.point(s)).collect();
    let ys: Vec<_> = corr.pairs().iter().map(|&(_, t)| tgt.point(t)).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = T::one();
        for j in (i + 1)..n {
            let d = Float::abs((xs[i] - xs[j]).norm() - (ys[i] - ys[j]).norm());
            let v = Float::max(T::zero(), T::one() - (d * d) / (sigma_d * sigma_d));
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Scalar consistency score: the maximum row sum — the total consistency
/// mass of the most broadly consistent correspondence. Scales linearly
/// with the number of mutually consistent pairs.
pub fn sc_score<T: Scalar>(matrix: &DMatrix<T>) -> T {
    let (rows, cols) = matrix.shape();
    let mut best = T::zero();
    for i in 0..rows {
        let mut sum = T::zero();
        for j in 0..cols {
            sum = sum + matrix[(i, j)];
        }
        best = Float::max(best, sum);
    }
    best
}

/// Stage score with the small-set convention: fewer than two
/// correspondences cannot form a matrix, so the score is the pair count
/// itself (0 or 1, always below any useful threshold).
pub fn stage_score<T: Scalar>(
    corr: &CorrespondenceSet<T>,
    src: &PointCloud<T>,
    tgt: &PointCloud<T>,
    sigma_d: T,
) -> Result<T, T> {
    if corr.len() < 2 {
        return Ok(T::cast(corr.len() as f64));
    }
    Ok(sc_score(&sc_matrix(corr, src, tgt, sigma_d)?))
}

/// Early-exit decision for a stage.
///
/// Global stage: exit-success iff the score reaches the global threshold.
/// Local stage i: exit-degraded iff the score delta (or raw score, per
/// the configured rule) falls strictly below the stage's threshold.
/// A disabled classifier always continues.
pub fn decide<T: Scalar>(
    stage: Stage,
    current_score: T,
    previous_score: Option<T>,
    cfg: &ClassifierConfig<T>,
) -> Result<Decision, T> {
    cfg.validate()?;
    if !cfg.enabled {
        return Ok(Decision::Continue);
    }
    match stage {
        Stage::Global => {
            if current_score >= cfg.global_threshold {
                Ok(Decision::ExitSuccess)
            } else {
                Ok(Decision::Continue)
            }
        }
        Stage::Local(i) => {
            let previous = previous_score.ok_or(Error::MissingPreviousScore)?;
            let threshold = cfg.local_threshold(i);
            let observed = match cfg.local_rule {
                LocalRule::Delta => current_score - previous,
                LocalRule::Raw => current_score,
            };
            if observed < threshold {
                Ok(Decision::ExitDegraded)
            } else {
                Ok(Decision::Continue)
            }
        }
    }
}

/// Computes the consistency matrix, score, and decision for one stage.
pub fn evaluate_stage<T: Scalar>(
    corr: &CorrespondenceSet<T>,
    src: &PointCloud<T>,
    tgt: &PointCloud<T>,
    stage: Stage,
    previous_score: Option<T>,
    cfg: &ClassifierConfig<T>,
) -> Result<SCReport<T>, T> {
    let matrix = sc_matrix(corr, src, tgt, cfg.sigma_d)?;
    let score = sc_score(&matrix);
    let decision = decide(stage, score, previous_score, cfg)?;
    Ok(SCReport { sc_matrix: matrix, score, decision })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::RigidTransform;
    use nalgebra::{Point3, Vector3};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: Vec<Point3<f64>>) -> PointCloud<f64> {
        PointCloud::new(points).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud<f64> {
        cloud(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect(),
        )
    }

    fn diag_corr(n: usize) -> CorrespondenceSet<f64> {
        CorrespondenceSet::new((0..n).map(|i| (i, i)).collect(), vec![1.0; n], n, n).unwrap()
    }

    #[test]
    fn rigid_consistent_pairs_score_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = random_cloud(&mut rng, 12);
        let motion = RigidTransform::from_axis_angle(
            &Vector3::z_axis(),
            0.7,
            Vector3::new(0.3, -0.2, 0.5),
        );
        let tgt = motion.transform_cloud(&src);
        let m = sc_matrix(&diag_corr(12), &src, &tgt, 0.1).unwrap();
        assert!(m.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        assert!((sc_score(&m) - 12.0).abs() < 1e-9);
    }

    #[test]
    fn discrepancy_at_sigma_scores_exactly_zero() {
        let src = cloud(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]);
        let tgt = cloud(vec![Point3::origin(), Point3::new(1.1, 0.0, 0.0)]);
        let m = sc_matrix(&diag_corr(2), &src, &tgt, 0.1).unwrap();
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 0)], 0.0);
        assert_eq!(m[(0, 0)], 1.0);
    }

    #[test]
    fn matrix_matches_the_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = random_cloud(&mut rng, 20);
        let tgt = random_cloud(&mut rng, 20);
        let sigma = 0.25;
        let m = sc_matrix(&diag_corr(20), &src, &tgt, sigma).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let d = ((src.point(i) - src.point(j)).norm()
                    - (tgt.point(i) - tgt.point(j)).norm())
                .abs();
                let expect = (1.0 - d * d / (sigma * sigma)).max(0.0);
                assert!((m[(i, j)] - expect).abs() < 1e-12);
            }
        }
        // Structural invariants: symmetry and unit diagonal.
        for i in 0..20 {
            assert_eq!(m[(i, i)], 1.0);
            for j in 0..20 {
                assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matrix_is_invariant_to_rigid_motions_of_either_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = random_cloud(&mut rng, 15);
        let tgt = random_cloud(&mut rng, 15);
        let base = sc_matrix(&diag_corr(15), &src, &tgt, 0.2).unwrap();

        let g = RigidTransform::from_axis_angle(
            &Vector3::x_axis(),
            1.1,
            Vector3::new(5.0, -3.0, 2.0),
        );
        let h = RigidTransform::from_axis_angle(
            &Vector3::y_axis(),
            -0.4,
            Vector3::new(-1.0, 7.0, 0.1),
        );
        let moved = sc_matrix(
            &diag_corr(15),
            &g.transform_cloud(&src),
            &h.transform_cloud(&tgt),
            0.2,
        )
        .unwrap();
        for (a, b) in base.iter().zip(moved.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn undersized_correspondence_sets_are_rejected() {
        let src = cloud(vec![Point3::origin()]);
        let tgt = cloud(vec![Point3::origin()]);
        let err = sc_matrix(&diag_corr(1), &src, &tgt, 0.1);
        assert!(matches!(err, Err(Error::UndersizedInput { .. })));
        assert_eq!(stage_score(&diag_corr(1), &src, &tgt, 0.1).unwrap(), 1.0);
        assert_eq!(
            stage_score(&CorrespondenceSet::empty(), &src, &tgt, 0.1).unwrap(),
            0.0
        );
    }

    #[test]
    fn score_examples_and_oracle() {
        assert_eq!(sc_score(&DMatrix::from_element(7, 7, 1.0)), 7.0);
        assert_eq!(sc_score(&DMatrix::<f64>::identity(5, 5)), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = DMatrix::from_fn(9, 9, |_, _| rng.random_range(0.0..1.0));
        let expect = (0..9)
            .map(|i| (0..9).map(|j| m[(i, j)]).sum::<f64>())
            .fold(f64::MIN, f64::max);
        assert!((sc_score(&m) - expect).abs() < 1e-12);
    }

    #[test]
    fn adding_a_consistent_pair_never_lowers_the_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(3..15);
            let motion = RigidTransform::from_axis_angle(
                &Vector3::z_axis(),
                rng.random_range(-1.0..1.0),
                Vector3::new(0.4, 0.0, -0.1),
            );
            // Noisy base set plus one extra exactly-consistent pair.
            let mut src_pts: Vec<Point3<f64>> = (0..n + 1)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect();
            let mut tgt_pts: Vec<Point3<f64>> = src_pts
                .iter()
                .map(|p| {
                    let q = motion.apply_point(p);
                    Point3::new(
                        q.x + rng.random_range(-0.05..0.05),
                        q.y + rng.random_range(-0.05..0.05),
                        q.z + rng.random_range(-0.05..0.05),
                    )
                })
                .collect();
            // The added pair is exact: fully consistent with the ideal
            // motion shared by all others.
            tgt_pts[n] = motion.apply_point(&src_pts[n]);
            let baseline_src = cloud(src_pts[..n].to_vec());
            let baseline_tgt = cloud(tgt_pts[..n].to_vec());
            let before = sc_score(
                &sc_matrix(&diag_corr(n), &baseline_src, &baseline_tgt, 0.3).unwrap(),
            );
            src_pts.truncate(n + 1);
            tgt_pts.truncate(n + 1);
            let after = sc_score(
                &sc_matrix(&diag_corr(n + 1), &cloud(src_pts), &cloud(tgt_pts), 0.3).unwrap(),
            );
            assert!(after >= before - 1e-12);
        }
    }

    #[test]
    fn global_decision_follows_the_threshold() {
        let cfg = ClassifierConfig::<f64>::default();
        assert_eq!(decide(Stage::Global, 250.0, None, &cfg).unwrap(), Decision::ExitSuccess);
        assert_eq!(decide(Stage::Global, 200.0, None, &cfg).unwrap(), Decision::ExitSuccess);
        assert_eq!(decide(Stage::Global, 199.9, None, &cfg).unwrap(), Decision::Continue);
    }

    #[test]
    fn local_decision_compares_deltas_strictly() {
        let cfg = ClassifierConfig {
            local_thresholds: Some(vec![15.0, 25.0, 35.0, 45.0]),
            ..ClassifierConfig::default()
        };
        // delta 30 ≥ 15 → continue.
        assert_eq!(
            decide(Stage::Local(1), 130.0, Some(100.0), &cfg).unwrap(),
            Decision::Continue
        );
        // delta exactly at the threshold → continue (strict <).
        assert_eq!(
            decide(Stage::Local(1), 115.0, Some(100.0), &cfg).unwrap(),
            Decision::Continue
        );
        // delta 14.9 < 15 → degraded.
        assert_eq!(
            decide(Stage::Local(1), 114.9, Some(100.0), &cfg).unwrap(),
            Decision::ExitDegraded
        );
        // Stages beyond the list clamp to its last entry (45).
        assert_eq!(
            decide(Stage::Local(9), 144.0, Some(100.0), &cfg).unwrap(),
            Decision::ExitDegraded
        );
        assert_eq!(
            decide(Stage::Local(9), 146.0, Some(100.0), &cfg).unwrap(),
            Decision::Continue
        );
    }

    #[test]
    fn generated_local_schedule_starts_at_the_fraction_and_steps() {
        let cfg = ClassifierConfig::<f64>::default(); // N_g = 200, 0.1, step 10
        assert_eq!(cfg.local_threshold(1), 20.0);
        assert_eq!(cfg.local_threshold(2), 30.0);
        assert_eq!(cfg.local_threshold(4), 50.0);
    }

    #[test]
    fn missing_previous_score_is_a_contract_violation() {
        let cfg = ClassifierConfig::<f64>::default();
        assert!(matches!(
            decide(Stage::Local(1), 50.0, None, &cfg),
            Err(Error::MissingPreviousScore)
        ));
    }

    #[test]
    fn raw_rule_compares_scores_directly() {
        let cfg = ClassifierConfig {
            local_rule: LocalRule::Raw,
            local_thresholds: Some(vec![120.0]),
            ..ClassifierConfig::default()
        };
        assert_eq!(
            decide(Stage::Local(1), 119.0, Some(300.0), &cfg).unwrap(),
            Decision::ExitDegraded
        );
        assert_eq!(
            decide(Stage::Local(1), 121.0, Some(300.0), &cfg).unwrap(),
            Decision::Continue
        );
    }

    #[test]
    fn disabled_classifier_always_continues() {
        let cfg = ClassifierConfig { enabled: false, ..ClassifierConfig::default() };
        assert_eq!(decide(Stage::Global, 1e9, None, &cfg).unwrap(), Decision::Continue);
        assert_eq!(
            decide(Stage::Local(1), -1e9, Some(0.0), &cfg).unwrap(),
            Decision::Continue
        );
    }

    #[test]
    fn evaluate_stage_bundles_matrix_score_and_decision() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let src = random_cloud(&mut rng, 10);
        let motion =
            RigidTransform::from_axis_angle(&Vector3::z_axis(), 0.3, Vector3::zeros());
        let tgt = motion.transform_cloud(&src);
        let cfg = ClassifierConfig { global_threshold: 8.0, ..ClassifierConfig::default() };
        let report =
            evaluate_stage(&diag_corr(10), &src, &tgt, Stage::Global, None, &cfg).unwrap();
        assert!((report.score - 10.0).abs() < 1e-9);
        assert_eq!(report.decision, Decision::ExitSuccess);
    }
}
