//! Voxel-grid downsampling and the multi-resolution sampling pyramid.
//!
//! The registration pipeline matches at two widely separated resolutions:
//! very sparse anchor nodes at the top of the pyramid and a dense "fine"
//! level near the bottom. The pyramid halves resolution per level by
//! doubling the voxel size.

use nalgebra::{Point3, Vector3};
use num_traits::Float;
use std::collections::HashMap;

use crate::cloud::{FeatureSet, PointCloud};
use crate::error::{Error, Result};
use crate::index::SpatialIndex;
use crate::scalar::Scalar;

/// Voxel-grid downsample: one output point per occupied voxel, placed at
/// the member centroid.
///
/// Output order is the first-occurrence order of voxels in the input, so
/// the result is deterministic given the input order. Normals are averaged
/// and renormalized (falling back to the lowest-index member's normal when
/// the average cancels out); features are averaged componentwise.
pub fn grid_downsample<T: Scalar>(cloud: &PointCloud<T>, voxel: T) -> Result<PointCloud<T>, T> {
    if !(voxel > T::zero()) || !Float::is_finite(voxel) {
        return Err(Error::InvalidConfig(format!(
            "voxel size must be positive and finite, got {voxel}"
        )));
    }
    let mut slots: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let key = (
            Float::floor(p.x / voxel).as_f64() as i64,
            Float::floor(p.y / voxel).as_f64() as i64,
            Float::floor(p.z / voxel).as_f64() as i64,
        );
        let slot = *slots.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(i);
    }

    let mut points = Vec::with_capacity(groups.len());
    for group in &groups {
        let mut acc = Vector3::zeros();
        for &i in group {
            acc += cloud.point(i).coords;
        }
        points.push(Point3::from(acc / T::from_usize(group.len()).unwrap()));
    }
    let mut out = PointCloud::new(points)?;

    if let Some(normals) = cloud.normals() {
        let merged = groups
            .iter()
            .map(|group| {
                let mut acc = Vector3::zeros();
                for &i in group {
                    acc += normals[i];
                }
                if acc.norm() > T::cast(1e-12) {
                    acc.normalize()
                } else {
                    // Opposing members cancelled out; keep the first
                    // member's normal so the attribute stays total.
                    normals[group[0]]
                }
            })
            .collect();
        out = out.with_normals(merged)?;
    }

    if let Some(features) = cloud.features() {
        let width = features.width();
        let mut data = Vec::with_capacity(groups.len() * width);
        for group in &groups {
            let mut acc = vec![T::zero(); width];
            for &i in group {
                for (a, v) in acc.iter_mut().zip(features.row(i)) {
                    *a = *a + *v;
                }
            }
            let inv = T::one() / T::from_usize(group.len()).unwrap();
            data.extend(acc.into_iter().map(|a| a * inv));
        }
        out = out.with_features(FeatureSet::new(width, data)?)?;
    }

    Ok(out)
}

/// Multi-resolution pyramid over one cloud.
///
/// `level(0)` is the input cloud itself; `level(j)` for `j ≥ 1` is the
/// input downsampled at voxel `base_voxel · 2^(j-1)` (so the voxel size
/// strictly doubles per downsampled level). Each point at level `j ≥ 1`
/// records a parent: its nearest neighbor at the finer level `j − 1`
/// (lowest index on ties).
#[derive(Debug, Clone)]
pub struct SamplingPyramid<T: Scalar> {
    levels: Vec<PointCloud<T>>,
    parent_of: Vec<Vec<usize>>,
    voxel_sizes: Vec<T>,
}

impl<T: Scalar> SamplingPyramid<T> {
    /// Number of stored levels, counting the input as level 0.
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Cloud at level `j` (0 = input).
    pub fn level(&self, j: usize) -> &PointCloud<T> {
        &self.levels[j]
    }

    /// Index of the coarsest level.
    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// Parent indices for level `j`: `parent_of(j)[i]` is the nearest
    /// point at level `j − 1`. Empty for level 0.
    pub fn parent_of(&self, j: usize) -> &[usize] {
        &self.parent_of[j]
    }

    /// Voxel sizes of the downsampled levels; entry `j` belongs to level
    /// `j + 1`.
    pub fn voxel_sizes(&self) -> &[T] {
        &self.voxel_sizes
    }

    /// Voxel size used to build level `j`, or the base voxel for level 0
    /// (which is not resampled).
    pub fn voxel_of_level(&self, j: usize) -> T {
        if j == 0 {
            self.voxel_sizes[0]
        } else {
            self.voxel_sizes[j - 1]
        }
    }
}

/// Builds a [`SamplingPyramid`] with `levels` downsampled levels above the
/// input, doubling the voxel per level.
///
/// Fails when `levels < 2`, when the base voxel is not positive, or when a
/// level comes out empty (which only happens for an empty input).
pub fn build_pyramid<T: Scalar>(
    cloud: &PointCloud<T>,
    base_voxel: T,
    levels: usize,
) -> Result<SamplingPyramid<T>, T> {
    if levels < 2 {
        return Err(Error::InvalidConfig(format!(
            "pyramid needs at least 2 levels, got {levels}"
        )));
    }
    if !(base_voxel > T::zero()) || !Float::is_finite(base_voxel) {
        return Err(Error::InvalidConfig(format!(
            "base voxel must be positive and finite, got {base_voxel}"
        )));
    }

    let mut stack = SamplingPyramid {
        levels: vec![cloud.clone()],
        parent_of: vec![Vec::new()],
        voxel_sizes: Vec::with_capacity(levels),
    };
    let mut voxel = base_voxel;
    for j in 1..=levels {
        let finer = &stack.levels[j - 1];
        let coarse = grid_downsample(finer, voxel)?;
        if coarse.is_empty() {
            return Err(Error::EmptyPyramidLevel { level: j });
        }
        // Parents: nearest neighbor at the finer level, exact ties to the
        // lower index. The finer level is never empty here.
        let finder = SpatialIndex::new(finer.points(), voxel)?;
        let parents = coarse
            .points()
            .iter()
            .map(|p| finder.nearest(p).expect("finer level is nonempty"))
            .collect();
        stack.levels.push(coarse);
        stack.parent_of.push(parents);
        stack.voxel_sizes.push(voxel);
        voxel = voxel * T::cast(2.0);
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64, z: f64) -> Point3<f64> {
        Point3::new(x, y, z)
    }

    #[test]
    fn voxel_sizes_double_from_the_base() {
        let cloud = PointCloud::new(vec![p(0.0, 0.0, 0.0), p(1.0, 1.0, 1.0)]).unwrap();
        let pyr = build_pyramid(&cloud, 0.025, 5).unwrap();
        assert_eq!(pyr.voxel_sizes(), &[0.025, 0.05, 0.1, 0.2, 0.4]);
        assert_eq!(pyr.num_levels(), 6);
        assert_eq!(pyr.level(0).len(), 2);
    }

    #[test]
    fn members_of_one_voxel_collapse_to_their_centroid() {
        let cloud = PointCloud::new(vec![p(0.1, 0.1, 0.1), p(0.3, 0.1, 0.1)]).unwrap();
        let down = grid_downsample(&cloud, 0.5).unwrap();
        assert_eq!(down.len(), 1);
        assert_relative_eq!(down.point(0), p(0.2, 0.1, 0.1), epsilon = 1e-15);
    }

    #[test]
    fn voxel_boundaries_use_floor_semantics() {
        let cloud =
            PointCloud::new(vec![p(-0.5, 0.0, 0.0), p(0.0, 0.0, 0.0), p(0.5, 0.0, 0.0), p(1.0, 0.0, 0.0)])
                .unwrap();
        let down = grid_downsample(&cloud, 1.0).unwrap();
        // Voxels: [-1,0) gets -0.5; [0,1) gets 0.0 and 0.5; [1,2) gets 1.0.
        assert_eq!(down.len(), 3);
        assert_relative_eq!(down.point(0), p(-0.5, 0.0, 0.0));
        assert_relative_eq!(down.point(1), p(0.25, 0.0, 0.0));
        assert_relative_eq!(down.point(2), p(1.0, 0.0, 0.0));
    }

    #[test]
    fn level_sizes_never_grow() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..500)
            .map(|_| {
                p(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.2..0.2),
                )
            })
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let pyr = build_pyramid(&cloud, 0.1, 4).unwrap();
        for j in 1..pyr.num_levels() {
            assert!(pyr.level(j).len() <= pyr.level(j - 1).len());
            assert!(!pyr.level(j).is_empty());
        }
    }

    #[test]
    fn parents_are_exact_nearest_neighbors_at_the_finer_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<_> = (0..300)
            .map(|_| {
                p(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let pyr = build_pyramid(&cloud, 0.2, 3).unwrap();
        for j in 1..pyr.num_levels() {
            let finer = pyr.level(j - 1);
            for (i, q) in pyr.level(j).points().iter().enumerate() {
                let brute = finer
                    .points()
                    .iter()
                    .enumerate()
                    .min_by(|(ai, a), (bi, b)| {
                        (*a - q)
                            .norm()
                            .partial_cmp(&(*b - q).norm())
                            .unwrap()
                            .then(ai.cmp(bi))
                    })
                    .unwrap()
                    .0;
                assert_eq!(pyr.parent_of(j)[i], brute);
            }
        }
    }

    #[test]
    fn attributes_are_merged() {
        let cloud = PointCloud::new(vec![p(0.1, 0.0, 0.0), p(0.2, 0.0, 0.0)])
            .unwrap()
            .with_normals(vec![Vector3::z(), Vector3::x()])
            .unwrap()
            .with_features(FeatureSet::new(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let down = grid_downsample(&cloud, 1.0).unwrap();
        assert_eq!(down.len(), 1);
        let n = down.normals().unwrap()[0];
        assert_relative_eq!(n, Vector3::new(1.0, 0.0, 1.0).normalize(), epsilon = 1e-12);
        assert_eq!(down.features().unwrap().row(0), &[0.5, 0.5]);
    }

    #[test]
    fn cancelled_normals_fall_back_to_first_member() {
        let cloud = PointCloud::new(vec![p(0.1, 0.0, 0.0), p(0.2, 0.0, 0.0)])
            .unwrap()
            .with_normals(vec![Vector3::z(), -Vector3::z()])
            .unwrap();
        let down = grid_downsample(&cloud, 1.0).unwrap();
        assert_eq!(down.normals().unwrap()[0], Vector3::z());
    }

    #[test]
    fn empty_input_reports_the_empty_level() {
        let cloud = PointCloud::<f64>::new(vec![]).unwrap();
        match build_pyramid(&cloud, 0.1, 3).unwrap_err() {
            Error::EmptyPyramidLevel { level } => assert_eq!(level, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn config_violations_are_rejected() {
        let cloud = PointCloud::new(vec![p(0.0, 0.0, 0.0)]).unwrap();
        assert!(build_pyramid(&cloud, 0.1, 1).is_err());
        assert!(build_pyramid(&cloud, 0.0, 3).is_err());
        assert!(grid_downsample(&cloud, -0.5).is_err());
    }

    #[test]
    fn downsample_is_deterministic_given_input_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<_> = (0..200)
            .map(|_| {
                p(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let a = grid_downsample(&cloud, 0.3).unwrap();
        let b = grid_downsample(&cloud, 0.3).unwrap();
        assert_eq!(a, b);
    }
}
