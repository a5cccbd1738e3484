//! Large seeded equivalence suites: every algorithm with a nontrivial
//! implementation is checked against an independent brute-force oracle
//! written directly from its mathematical definition, across hundreds of
//! random instances. These complement the hand-sized cases in the unit
//! tests.

use nalgebra::{DMatrix, Point3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use scanreg::classifier::{sc_matrix, sc_score};
use scanreg::cloud::PointCloud;
use scanreg::error::Error;
use scanreg::eval::{
    circle_loss, point_matching_loss, rre, rte, CircleLossAnchor, LossConfig,
    MatchingLossInstance,
};
use scanreg::matching::{sinkhorn_augmented, CorrespondenceSet};
use scanreg::refine::{adaptive_dbscan, neighborhood_augmentation, ClusterConfig};
use scanreg::solver::weighted_kabsch;
use scanreg::transform::RigidTransform;

fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Point3<f64>> {
    (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
            )
        })
        .collect()
}

fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform<f64> {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-9 { Vector3::x() } else { axis.normalize() };
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let translation = Vector3::new(
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
    );
    RigidTransform::from_axis_angle(&axis, angle, translation)
}

// ---------------------------------------------------------------------
// Alignment solver: 500 random rigid motions recovered from exact
// correspondences, and exact zero-weight exclusion on every seed.
// ---------------------------------------------------------------------

#[test]
fn solver_recovers_500_random_motions_exactly() {
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..40);
        let src = random_points(&mut rng, n, 2.0);
        let truth = random_transform(&mut rng);
        let tgt: Vec<Point3<f64>> = src.iter().map(|p| truth.apply_point(p)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();

        let est = weighted_kabsch(&src, &tgt, &weights).expect("clean solve");
        let rot_err = rre(&est, &truth);
        let t_err = rte(&est, &truth);
        assert!(
            rot_err < 1e-6,
            "seed {seed}: rotation error {rot_err:e} degrees"
        );
        assert!(t_err < 1e-9, "seed {seed}: translation error {t_err:e} m");
    }
}

#[test]
fn solver_excludes_zero_weight_pairs_on_every_seed() {
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
        let n = rng.random_range(4..20);
        let src = random_points(&mut rng, n, 2.0);
        let truth = random_transform(&mut rng);
        let mut tgt: Vec<Point3<f64>> = src.iter().map(|p| truth.apply_point(p)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();

        let clean = weighted_kabsch(&src, &tgt, &weights).expect("clean solve");

        // Displace one pair by a metre but give it zero weight: the
        // solve must be unaffected.
        let corrupt = rng.random_range(0..n);
        tgt[corrupt] += Vector3::new(1.0, 0.0, 0.0);
        let mut corrupted_weights = weights.clone();
        corrupted_weights[corrupt] = 0.0;
        let masked = weighted_kabsch(&src, &tgt, &corrupted_weights).expect("masked solve");

        // The corrupted pair enters every accumulator multiplied by an
        // exact 0.0, so the two solves see identical arithmetic up to
        // the weight renormalization.
        assert!(
            rre(&masked, &clean) < 1e-9,
            "seed {seed}: masked rotation drifted"
        );
        assert!(
            rte(&masked, &clean) < 1e-9,
            "seed {seed}: masked translation drifted"
        );
    }
}

// ---------------------------------------------------------------------
// Adaptive clustering: labels equal an independent brute-force DBSCAN at
// the returned (ε, minPts) on 100 random instances, and the growth
// schedule terminates within |points| rounds even on adversarial data.
// ---------------------------------------------------------------------

/// Brute-force DBSCAN over the kept points, written independently from
/// the library: O(n²) neighborhoods, ascending seed order, FIFO
/// expansion, border points claimed by the first cluster that reaches
/// them.
fn brute_force_dbscan(
    points: &[Point3<f64>],
    weights: &[f64],
    eps: f64,
    min_pts: usize,
    weighted: bool,
) -> (Vec<i32>, usize) {
    let n = points.len();
    let neighborhood = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| {
                let d = (points[i] - points[j]).norm();
                if weighted {
                    d * 2.0 / (weights[i] + weights[j] + 1e-6) <= eps
                } else {
                    d <= eps
                }
            })
            .collect()
    };
    let mut labels = vec![i32::MIN; n];
    let mut next = 0i32;
    for seed in 0..n {
        if labels[seed] != i32::MIN {
            continue;
        }
        let hood = neighborhood(seed);
        if hood.len() < min_pts {
            labels[seed] = -1;
            continue;
        }
        labels[seed] = next;
        let mut frontier: std::collections::VecDeque<usize> = hood.into();
        while let Some(q) = frontier.pop_front() {
            if labels[q] == -1 {
                labels[q] = next;
            }
            if labels[q] != i32::MIN {
                continue;
            }
            labels[q] = next;
            let hood_q = neighborhood(q);
            if hood_q.len() >= min_pts {
                frontier.extend(hood_q);
            }
        }
        next += 1;
    }
    (labels, next as usize)
}

/// Lower-quartile weight by the nearest-rank rule, as documented on the
/// cluster configuration.
fn lower_quartile(weights: &[f64]) -> f64 {
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted[((sorted.len() as f64 * 0.25).ceil() as usize).max(1) - 1]
}

fn check_clustering_against_oracle(
    points: &[Point3<f64>],
    weights: &[f64],
    config: &ClusterConfig<f64>,
    context: &str,
) {
    let result = match adaptive_dbscan(points, weights, config) {
        Ok(r) => r,
        Err(Error::EmptyClustering) => {
            // Only legal when the similarity floor excluded everything.
            let floor = config.similarity_floor.unwrap_or_else(|| lower_quartile(weights));
            assert!(
                weights.iter().all(|&w| w < floor),
                "{context}: empty clustering but some weights pass the floor"
            );
            return;
        }
        Err(other) => panic!("{context}: unexpected error {other:?}"),
    };

    // The growth schedule bumps minPts every round, so the round count
    // is directly visible in the returned parameters.
    let rounds = (result.final_min_pts - config.min_pts) / config.min_pts_step.max(1) + 1;
    assert!(
        rounds <= points.len().max(1),
        "{context}: {rounds} growth rounds exceed the {}-point budget",
        points.len()
    );

    let floor = config.similarity_floor.unwrap_or_else(|| lower_quartile(weights));
    let kept: Vec<usize> = (0..points.len()).filter(|&i| weights[i] >= floor).collect();
    let kept_points: Vec<Point3<f64>> = kept.iter().map(|&i| points[i]).collect();
    let kept_weights: Vec<f64> = kept.iter().map(|&i| weights[i]).collect();

    let (oracle_labels, oracle_count) = brute_force_dbscan(
        &kept_points,
        &kept_weights,
        result.final_eps,
        result.final_min_pts,
        config.weighted_range_query,
    );
    assert_eq!(result.cluster_count, oracle_count, "{context}: cluster count");

    let mut expanded = vec![-1i32; points.len()];
    for (slot, &original) in kept.iter().enumerate() {
        expanded[original] = oracle_labels[slot];
    }
    assert_eq!(result.labels, expanded, "{context}: labels");
}

#[test]
fn clustering_matches_brute_force_on_100_random_instances() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2_000 + seed);
        let n = rng.random_range(3..=100);

        // A mix of blobs and scatter so real clusters exist.
        let blob_count = rng.random_range(1..4usize);
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            if rng.random_bool(0.7) {
                let c = rng.random_range(0..blob_count) as f64;
                let center = Point3::new(c * 2.0, 0.0, 0.0);
                points.push(Point3::new(
                    center.x + rng.random_range(-0.2..0.2),
                    center.y + rng.random_range(-0.2..0.2),
                    center.z + rng.random_range(-0.2..0.2),
                ));
            } else {
                points.push(Point3::new(
                    rng.random_range(-4.0..10.0),
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                ));
            }
        }
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();

        let config = ClusterConfig {
            eps: rng.random_range(0.1..0.6),
            min_pts: rng.random_range(2..6),
            eps_growth: 1.1,
            min_pts_step: 1,
            similarity_floor: if seed % 2 == 0 {
                None
            } else {
                Some(rng.random_range(0.0..0.5))
            },
            weighted_range_query: seed % 3 != 0,
        };
        check_clustering_against_oracle(&points, &weights, &config, &format!("seed {seed}"));
    }
}

#[test]
fn clustering_handles_adversarial_geometry() {
    // All points coincident: one cluster, immediate termination.
    let coincident = vec![Point3::new(0.5, -0.25, 1.0); 50];
    let weights = vec![1.0; 50];
    let config = ClusterConfig {
        similarity_floor: Some(0.0),
        ..ClusterConfig::default()
    };
    check_clustering_against_oracle(&coincident, &weights, &config, "all-coincident");

    // All points isolated far beyond any grown radius: zero clusters on
    // the first round, which is terminal.
    let isolated: Vec<Point3<f64>> = (0..50).map(|i| Point3::new(i as f64 * 10.0, 0.0, 0.0)).collect();
    check_clustering_against_oracle(&isolated, &weights, &config, "all-isolated");

    let result = adaptive_dbscan(&isolated, &weights, &config).unwrap();
    assert_eq!(result.cluster_count, 0);
    assert_eq!(result.final_min_pts, config.min_pts, "zero-cluster round must terminate");
}

// ---------------------------------------------------------------------
// Spatial consistency: 200 random correspondence sets against the
// double-loop definition, plus symmetry, unit diagonal, rigid
// invariance, and the exact kernel boundaries.
// ---------------------------------------------------------------------

#[test]
fn consistency_matrix_matches_definition_on_200_random_sets() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3_000 + seed);
        let src = PointCloud::new(random_points(&mut rng, 60, 2.0)).unwrap();
        let tgt = PointCloud::new(random_points(&mut rng, 60, 2.0)).unwrap();
        let count = rng.random_range(2..40);
        let pairs: Vec<(usize, usize)> = {
            let mut seen = std::collections::HashSet::new();
            let mut out = Vec::new();
            while out.len() < count {
                let p = (rng.random_range(0..60), rng.random_range(0..60));
                if seen.insert(p) {
                    out.push(p);
                }
            }
            out
        };
        let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..1.0)).collect();
        let corr = CorrespondenceSet::new(pairs.clone(), weights, 60, 60).unwrap();
        let sigma = rng.random_range(0.05..0.5);

        let matrix = sc_matrix(&corr, &src, &tgt, sigma).unwrap();

        // Literal double loop over the definition.
        for i in 0..count {
            for j in 0..count {
                let (si, ti) = pairs[i];
                let (sj, tj) = pairs[j];
                let d = ((src.point(si) - src.point(sj)).norm()
                    - (tgt.point(ti) - tgt.point(tj)).norm())
                .abs();
                let expected = if i == j { 1.0 } else { (1.0 - d * d / (sigma * sigma)).max(0.0) };
                assert!(
                    (matrix[(i, j)] - expected).abs() <= 1e-12,
                    "seed {seed}: entry ({i},{j})"
                );
            }
        }

        // Symmetry and unit diagonal.
        for i in 0..count {
            assert_eq!(matrix[(i, i)], 1.0, "seed {seed}: diagonal");
            for j in 0..count {
                assert_eq!(matrix[(i, j)], matrix[(j, i)], "seed {seed}: symmetry");
            }
        }

        // Joint rigid motion of both clouds leaves the matrix unchanged.
        let motion = random_transform(&mut rng);
        let moved = sc_matrix(
            &corr,
            &motion.transform_cloud(&src),
            &motion.transform_cloud(&tgt),
            sigma,
        )
        .unwrap();
        let drift = (&matrix - &moved).abs().max();
        assert!(drift <= 1e-9, "seed {seed}: rigid drift {drift:e}");
    }
}

#[test]
fn consistency_kernel_boundaries_are_exact() {
    // Two correspondences whose source-side and target-side distances
    // agree exactly: consistency 1. A third pair engineered so the
    // distance discrepancy equals sigma exactly: consistency 0.
    let sigma = 0.5;
    let src = PointCloud::new(vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(0.0, 2.0, 0.0),
    ])
    .unwrap();
    let tgt = PointCloud::new(vec![
        Point3::new(5.0, 0.0, 0.0),
        Point3::new(6.0, 0.0, 0.0),
        Point3::new(5.0, 2.5, 0.0),
    ])
    .unwrap();
    let corr = CorrespondenceSet::new(vec![(0, 0), (1, 1), (2, 2)], vec![1.0; 3], 3, 3).unwrap();
    let matrix = sc_matrix(&corr, &src, &tgt, sigma).unwrap();

    // Pairs 0-1: both distances exactly 1 → discrepancy 0 → exactly 1.
    assert_eq!(matrix[(0, 1)], 1.0);
    // Pairs 0-2: source distance 2, target distance 2.5 → discrepancy
    // exactly sigma → kernel hits its root exactly.
    assert_eq!(matrix[(0, 2)], 0.0);
}

#[test]
fn consistency_score_never_drops_when_adding_a_consistent_pair() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4_000 + seed);
        let n = rng.random_range(3..30);
        let src_pts = random_points(&mut rng, n + 1, 2.0);
        let motion = random_transform(&mut rng);
        let tgt_pts: Vec<Point3<f64>> = src_pts.iter().map(|p| motion.apply_point(p)).collect();
        let src = PointCloud::new(src_pts).unwrap();
        let tgt = PointCloud::new(tgt_pts).unwrap();

        let pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        let base = CorrespondenceSet::new(pairs.clone(), vec![1.0; n], n + 1, n + 1).unwrap();
        let base_score = sc_score(&sc_matrix(&base, &src, &tgt, 0.1).unwrap());

        let mut extended_pairs = pairs;
        extended_pairs.push((n, n));
        let extended = CorrespondenceSet::new(extended_pairs, vec![1.0; n + 1], n + 1, n + 1).unwrap();
        let extended_score = sc_score(&sc_matrix(&extended, &src, &tgt, 0.1).unwrap());

        assert!(
            extended_score >= base_score - 1e-12,
            "seed {seed}: score dropped from {base_score} to {extended_score}"
        );
    }
}

// ---------------------------------------------------------------------
// Neighborhood augmentation: 100 random instances against a brute-force
// sort of min-distances, including budgets beyond the pool and exact
// distance ties.
// ---------------------------------------------------------------------

fn brute_force_augmentation(
    pool: &[Point3<f64>],
    centers: &[Point3<f64>],
    budget: usize,
) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = pool
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = centers
                .iter()
                .map(|c| (p - c).norm())
                .fold(f64::INFINITY, f64::min);
            (d, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = scored.into_iter().take(budget).map(|(_, i)| i).collect();
    picked.sort_unstable();
    picked
}

#[test]
fn augmentation_matches_brute_force_on_100_random_instances() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5_000 + seed);
        let pool_size = rng.random_range(1..=500);
        let pool_pts = random_points(&mut rng, pool_size, 3.0);
        let center_count = rng.random_range(1..=8);
        let centers = random_points(&mut rng, center_count, 3.0);
        // Budgets cross the pool size in both directions.
        let budget = rng.random_range(1..=(pool_size + 100));

        let pool = PointCloud::new(pool_pts.clone()).unwrap();
        let picked = neighborhood_augmentation(&pool, &centers, budget).unwrap();
        let expected = brute_force_augmentation(&pool_pts, &centers, budget);
        assert_eq!(picked, expected, "seed {seed}");

        if budget >= pool_size {
            assert_eq!(picked, (0..pool_size).collect::<Vec<_>>(), "seed {seed}: full pool");
        }
    }
}

#[test]
fn augmentation_breaks_distance_ties_by_index() {
    // Eight pool points all exactly distance 1 from the single center,
    // then four strictly farther. A budget of 5 must take the five
    // lowest indices of the tied shell.
    let mut pts = Vec::new();
    for i in 0..8 {
        let angle = i as f64 * std::f64::consts::FRAC_PI_4;
        pts.push(Point3::new(angle.cos(), angle.sin(), 0.0));
    }
    for i in 0..4 {
        pts.push(Point3::new(2.0 + i as f64, 0.0, 0.0));
    }
    let pool = PointCloud::new(pts.clone()).unwrap();
    let center = [Point3::new(0.0, 0.0, 0.0)];

    let picked = neighborhood_augmentation(&pool, &center, 5).unwrap();
    assert_eq!(picked, brute_force_augmentation(&pts, &center, 5));
    // All shell members are unit distance up to rounding; the tie rule
    // keeps the result deterministic regardless.
    assert_eq!(picked.len(), 5);
}

// ---------------------------------------------------------------------
// Evaluation losses: literal-summation oracles on 50 random instances
// each, plus non-negativity.
// ---------------------------------------------------------------------

fn circle_loss_oracle(anchors: &[CircleLossAnchor<f64>], cfg: &LossConfig<f64>) -> f64 {
    if anchors.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for anchor in anchors {
        let mut pos = 0.0;
        for &(d, o) in &anchor.positives {
            if o < cfg.overlap_floor {
                continue;
            }
            let beta = (d - cfg.margin_positive).max(0.0);
            pos += (o.sqrt() * beta * (d - cfg.margin_positive)).exp();
        }
        let mut neg = 0.0;
        for &d in &anchor.negatives {
            let beta = (cfg.margin_negative - d).max(0.0);
            neg += (beta * (cfg.margin_negative - d)).exp();
        }
        total += (1.0 + pos * neg).ln();
    }
    total / anchors.len() as f64
}

#[test]
fn circle_loss_matches_oracle_on_50_random_instances() {
    let cfg = LossConfig::default();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(6_000 + seed);
        let anchors: Vec<CircleLossAnchor<f64>> = (0..rng.random_range(1..6))
            .map(|_| CircleLossAnchor {
                positives: (0..rng.random_range(0..5))
                    .map(|_| (rng.random_range(0.0..2.5), rng.random_range(0.0..1.0)))
                    .collect(),
                negatives: (0..rng.random_range(0..5))
                    .map(|_| rng.random_range(0.0..2.5))
                    .collect(),
            })
            .collect();

        let value = circle_loss(&anchors, &cfg).unwrap();
        let expected = circle_loss_oracle(&anchors, &cfg);
        assert!(
            (value - expected).abs() <= 1e-9,
            "seed {seed}: {value} vs oracle {expected}"
        );
        assert!(value >= 0.0 && value.is_finite(), "seed {seed}: domain");
    }
}

fn matching_loss_oracle(instances: &[MatchingLossInstance<f64>]) -> f64 {
    let mut total = 0.0;
    for inst in instances {
        let m = inst.assignment.nrows() - 1;
        let n = inst.assignment.ncols() - 1;
        let term = |v: f64| -> f64 { -v.max(1e-12).ln() };
        for &(x, y) in &inst.matched {
            total += term(inst.assignment[(x, y)]);
        }
        for &x in &inst.unmatched_src {
            total += term(inst.assignment[(x, n)]);
        }
        for &y in &inst.unmatched_tgt {
            total += term(inst.assignment[(m, y)]);
        }
    }
    total / instances.len() as f64
}

#[test]
fn matching_loss_matches_oracle_on_50_random_instances() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7_000 + seed);
        let instances: Vec<MatchingLossInstance<f64>> = (0..rng.random_range(1..4))
            .map(|_| {
                let m = rng.random_range(2..6);
                let n = rng.random_range(2..6);
                // A genuine transport plan: random logits through the
                // dustbin-augmented normalization.
                let logits = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
                let assignment = sinkhorn_augmented(&logits, 100, 1.0);
                MatchingLossInstance {
                    assignment,
                    matched: (0..m.min(n))
                        .filter(|_| rng.random_bool(0.7))
                        .map(|i| (i, i))
                        .collect(),
                    unmatched_src: (0..m).filter(|_| rng.random_bool(0.3)).collect(),
                    unmatched_tgt: (0..n).filter(|_| rng.random_bool(0.3)).collect(),
                }
            })
            .collect();

        let result = point_matching_loss(&instances).unwrap();
        let expected = matching_loss_oracle(&instances);
        assert!(
            (result.value - expected).abs() <= 1e-9,
            "seed {seed}: {} vs oracle {expected}",
            result.value
        );
        // Transport entries never exceed their marginals (all 1 here),
        // so every negative log term is non-negative.
        assert!(result.value >= 0.0 && result.value.is_finite(), "seed {seed}: domain");
    }
}
