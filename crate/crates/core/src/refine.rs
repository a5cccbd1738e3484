//! Refined node production: adaptive density clustering of matched
//! points, cluster centroid extraction, and neighborhood augmentation
//! that pulls the next iteration's coarse nodes from the fine pyramid
//! pool around those centroids.

use nalgebra::Point3;
use num_traits::Float;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::index::SpatialIndex;
use crate::pyramid::SamplingPyramid;
use crate::scalar::Scalar;

/// Noise label for unclustered points.
pub const NOISE: i32 = -1;

/// Adaptive clustering parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig<T: Scalar> {
    /// Initial neighborhood radius ε (meters).
    pub eps: T,
    /// Initial core-point density threshold (neighbors including self).
    pub min_pts: usize,
    /// Multiplier applied to ε whenever the cluster count is still growing.
    pub eps_growth: T,
    /// Increment applied to `min_pts` alongside `eps_growth`.
    pub min_pts_step: usize,
    /// Drop points whose pair weight falls below this before clustering;
    /// `None` uses the 25th percentile of the given weights (nearest rank).
    pub similarity_floor: Option<T>,
    /// When true (default), the pair weights rescale the distance used by
    /// range queries: d′(i,j) = d(i,j)·2/(wᵢ + wⱼ + 1e-6), so confident
    /// pairs cluster at longer range. When false, weights act only
    /// through the similarity floor and queries are plain Euclidean.
    pub weighted_range_query: bool,
}

impl<T: Scalar> Default for ClusterConfig<T> {
    fn default() -> Self {
        Self {
            eps: T::cast(0.125),
            min_pts: 3,
            eps_growth: T::cast(1.1),
            min_pts_step: 1,
            similarity_floor: None,
            weighted_range_query: true,
        }
    }
}

impl<T: Scalar> ClusterConfig<T> {
    /// Checks the configuration invariants.
    pub fn validate(&self) -> Result<(), T> {
        if !(self.eps > T::zero()) {
            return Err(Error::InvalidConfig("cluster eps must be positive".into()));
        }
        if self.min_pts < 2 {
            return Err(Error::InvalidConfig("cluster min_pts must be ≥ 2".into()));
        }
        if !(self.eps_growth > T::one()) {
            return Err(Error::InvalidConfig("eps growth factor must exceed 1".into()));
        }
        if let Some(floor) = self.similarity_floor {
            if !(floor >= T::zero() && floor < T::one()) {
                return Err(Error::InvalidConfig(format!(
                    "similarity floor {floor} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// Labels from one adaptive clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult<T: Scalar> {
    /// Per-input-point label: −1 for noise or floor-dropped points,
    /// otherwise a cluster id in `[0, cluster_count)`.
    pub labels: Vec<i32>,
    /// Number of clusters M.
    pub cluster_count: usize,
    /// The radius the returned labeling was computed with.
    pub final_eps: T,
    /// The density threshold the returned labeling was computed with.
    pub final_min_pts: usize,
}

/// Nearest-rank percentile used for the default similarity floor.
fn percentile_25<T: Scalar>(weights: &[T]) -> T {
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));
    let rank = ((sorted.len() as f64 * 0.25).ceil() as usize).max(1) - 1;
    sorted[rank]
}

/// Density clustering with a growth schedule: run DBSCAN at (ε, minPts);
/// while the cluster count keeps strictly increasing, scale ε up, bump
/// minPts, and re-run. Returns the labeling of the first non-improving
/// run, together with the (ε, minPts) it was computed at.
///
/// Points whose weight falls below the similarity floor are dropped up
/// front and reported as noise.
pub fn adaptive_dbscan<T: Scalar>(
    points: &[Point3<T>],
    weights: &[T],
    config: &ClusterConfig<T>,
) -> Result<ClusterResult<T>, T> {
    config.validate()?;
    if points.len() != weights.len() {
        return Err(Error::InvalidConfig(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    for w in weights {
        if !Float::is_finite(*w) || *w < T::zero() || *w > T::one() {
            return Err(Error::InvalidConfig(format!("pair weight {w} outside [0, 1]")));
        }
    }

    let floor = match config.similarity_floor {
        Some(f) => f,
        None if weights.is_empty() => T::zero(),
        None => percentile_25(weights),
    };
    let kept: Vec<usize> = (0..points.len()).filter(|&i| weights[i] >= floor).collect();
    if kept.is_empty() {
        return Err(Error::EmptyClustering);
    }
    let kept_points: Vec<Point3<T>> = kept.iter().map(|&i| points[i]).collect();
    let kept_weights: Vec<T> = kept.iter().map(|&i| weights[i]).collect();

    let mut eps = config.eps;
    let mut min_pts = config.min_pts;
    let mut previous_count = 0usize;
    loop {
        let (labels, count) = dbscan(
            &kept_points,
            &kept_weights,
            eps,
            min_pts,
            config.weighted_range_query,
        )?;
        if count > previous_count {
            previous_count = count;
            eps = eps * config.eps_growth;
            min_pts += config.min_pts_step;
            continue;
        }
        let mut full = vec![NOISE; points.len()];
        for (slot, &original) in kept.iter().enumerate() {
            full[original] = labels[slot];
        }
        return Ok(ClusterResult {
            labels: full,
            cluster_count: count,
            final_eps: eps,
            final_min_pts: min_pts,
        });
    }
}

/// One DBSCAN pass. Expansion visits seed points in ascending index
/// order with a FIFO frontier, so labels are deterministic.
fn dbscan<T: Scalar>(
    points: &[Point3<T>],
    weights: &[T],
    eps: T,
    min_pts: usize,
    weighted: bool,
) -> Result<(Vec<i32>, usize), T> {
    const UNVISITED: i32 = -2;
    let n = points.len();
    // Weighted distance shrinks at most by the factor 2/(2 + 1e-6), so a
    // slightly dilated Euclidean ball bounds every weighted neighborhood.
    let euclid_bound = if weighted { eps * T::cast(1.0 + 1e-6) } else { eps };
    let grid = SpatialIndex::new(points, Float::max(euclid_bound, T::cast(1e-12)))?;
    let neighbors = |i: usize| -> Vec<usize> {
        let coarse = grid.within_radius(&points[i], euclid_bound);
        if !weighted {
            return coarse;
        }
        coarse
            .into_iter()
            .filter(|&j| {
                let d = (points[i] - points[j]).norm();
                let scaled = d * T::cast(2.0) / (weights[i] + weights[j] + T::cast(1e-6));
                scaled <= eps
            })
            .collect()
    };

    let mut labels = vec![UNVISITED; n];
    let mut cluster = 0i32;
    for seed in 0..n {
        if labels[seed] != UNVISITED {
            continue;
        }
        let hood = neighbors(seed);
        if hood.len() < min_pts {
            labels[seed] = NOISE;
            continue;
        }
        labels[seed] = cluster;
        let mut frontier: std::collections::VecDeque<usize> = hood.into_iter().collect();
        while let Some(q) = frontier.pop_front() {
            if labels[q] == NOISE {
                labels[q] = cluster; // border point
            }
            if labels[q] != UNVISITED {
                continue;
            }
            labels[q] = cluster;
            let hood_q = neighbors(q);
            if hood_q.len() >= min_pts {
                frontier.extend(hood_q);
            }
        }
        cluster += 1;
    }
    Ok((labels, cluster as usize))
}

/// Arithmetic-mean centroid of each cluster, ordered by label. Noise
/// points are excluded; zero clusters give an empty list.
pub fn cluster_centroids<T: Scalar>(
    points: &[Point3<T>],
    result: &ClusterResult<T>,
) -> Vec<Point3<T>> {
    let mut sums = vec![nalgebra::Vector3::zeros(); result.cluster_count];
    let mut counts = vec![0usize; result.cluster_count];
    for (p, &label) in points.iter().zip(&result.labels) {
        if label >= 0 {
            sums[label as usize] += p.coords;
            counts[label as usize] += 1;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| Point3::from(s / T::cast(c.max(1) as f64)))
        .collect()
}

/// Selects the `budget` candidate-pool points nearest to any center (by
/// minimum center distance, index ties toward lower index) and returns
/// their indices in ascending order.
pub fn neighborhood_augmentation<T: Scalar>(
    candidates: &PointCloud<T>,
    centers: &[Point3<T>],
    budget: usize,
) -> Result<Vec<usize>, T> {
    if candidates.is_empty() {
        return Err(Error::UndersizedInput {
            what: "augmentation candidate pool",
            needed: 1,
            got: 0,
            unit: "points",
        });
    }
    if centers.is_empty() {
        return Err(Error::UndersizedInput {
            what: "augmentation centers",
            needed: 1,
            got: 0,
            unit: "centers",
        });
    }
    if budget == 0 {
        return Err(Error::InvalidConfig("augmentation budget must be ≥ 1".into()));
    }
    let mut scored: Vec<(T, usize)> = candidates
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let best = centers
                .iter()
                .map(|c| (p - c).norm())
                .fold(T::infinity(), |a, b| Float::min(a, b));
            (best, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distance").then(a.1.cmp(&b.1)));
    scored.truncate(budget);
    let mut indices: Vec<usize> = scored.into_iter().map(|(_, i)| i).collect();
    indices.sort_unstable();
    Ok(indices)
}

/// Refined-node production parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig<T: Scalar> {
    /// Number of refined nodes to produce per side.
    pub node_budget: usize,
    /// Pyramid level supplying augmentation candidates.
    pub search_level: usize,
    /// Clustering parameters for both sides.
    pub cluster: ClusterConfig<T>,
}

impl<T: Scalar> Default for RefineConfig<T> {
    fn default() -> Self {
        Self { node_budget: 1, search_level: 2, cluster: ClusterConfig::default() }
    }
}

/// Rescales pair weights so the strongest pair has unit similarity.
///
/// Transport masses carry an arbitrary scale (roughly one over the patch
/// size), while the weighted cluster metric is calibrated so that d′
/// reduces to the Euclidean distance for unit-weight pairs. Only the
/// relative ordering of the masses is meaningful, so the maximum is
/// mapped to 1. All-zero weights are returned unchanged.
pub fn unit_scaled_weights<T: Scalar>(weights: &[T]) -> Vec<T> {
    let max = weights.iter().fold(T::zero(), |m, &w| Float::max(m, w));
    if max > T::zero() {
        weights.iter().map(|&w| w / max).collect()
    } else {
        weights.to_vec()
    }
}

/// Produces one side's refined nodes: cluster the side's matched points
/// under the pair weights (rescaled so the strongest pair has unit
/// similarity), take cluster centroids, then pull `budget` pool points
/// (with their features) from `pyramid`'s search level around those
/// centroids.
pub fn refine_side<T: Scalar>(
    matched: &[Point3<T>],
    weights: &[T],
    pyramid: &SamplingPyramid<T>,
    cluster_cfg: &ClusterConfig<T>,
    search_level: usize,
    budget: usize,
) -> Result<PointCloud<T>, T> {
    if search_level >= pyramid.num_levels() {
        return Err(Error::InvalidConfig(format!(
            "search level {search_level} out of range for {} levels",
            pyramid.num_levels()
        )));
    }
    if budget == 0 {
        return Err(Error::InvalidConfig("refined node budget must be ≥ 1".into()));
    }
    let weights = unit_scaled_weights(weights);
    let clustering = adaptive_dbscan(matched, &weights, cluster_cfg)?;
    let centers = cluster_centroids(matched, &clustering);
    if centers.is_empty() {
        return Err(Error::EmptyClustering);
    }
    let pool = pyramid.level(search_level);
    let picked = neighborhood_augmentation(pool, &centers, budget)?;
    Ok(pool.select(&picked))
}

/// Refined nodes for both sides, clustering each side's matched points
/// independently under the shared pair weights.
pub fn refined_nodes<T: Scalar>(
    matched_src: &[Point3<T>],
    matched_tgt: &[Point3<T>],
    weights: &[T],
    src_pyramid: &SamplingPyramid<T>,
    tgt_pyramid: &SamplingPyramid<T>,
    config: &RefineConfig<T>,
) -> Result<(PointCloud<T>, PointCloud<T>), T> {
    let src = refine_side(
        matched_src,
        weights,
        src_pyramid,
        &config.cluster,
        config.search_level,
        config.node_budget,
    )?;
    let tgt = refine_side(
        matched_tgt,
        weights,
        tgt_pyramid,
        &config.cluster,
        config.search_level,
        config.node_budget,
    )?;
    Ok((src, tgt))
}
