//! Uniform-grid spatial index with exact nearest/radius queries.
//!
//! Queries return exactly what a brute-force scan over the same distance
//! function returns; ties are broken toward the lower point index. The
//! shell search widens its scan by one extra cell/ring so floating-point
//! boundary placement can never drop a qualifying point.

use nalgebra::Point3;
use num_traits::Float;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

type CellKey = (i64, i64, i64);

/// Grid-bucketed index over a fixed set of points.
#[derive(Debug, Clone)]
pub struct SpatialIndex<T: Scalar> {
    points: Vec<Point3<T>>,
    cell: T,
    buckets: HashMap<CellKey, Vec<u32>>,
    cell_min: CellKey,
    cell_max: CellKey,
}

impl<T: Scalar> SpatialIndex<T> {
    /// Builds an index with the given grid cell size (must be positive).
    ///
    /// The cell size only affects speed, never results; a size near the
    /// typical query radius works well.
    pub fn new(points: &[Point3<T>], cell: T) -> Result<Self, T> {
        if !(cell > T::zero()) || !Float::is_finite(cell) {
            return Err(Error::InvalidConfig(format!(
                "spatial index cell size must be positive and finite, got {cell}"
            )));
        }
        let mut buckets: HashMap<CellKey, Vec<u32>> = HashMap::new();
        let mut cell_min = (i64::MAX, i64::MAX, i64::MAX);
        let mut cell_max = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let key = cell_key(p, cell);
            cell_min = (cell_min.0.min(key.0), cell_min.1.min(key.1), cell_min.2.min(key.2));
            cell_max = (cell_max.0.max(key.0), cell_max.1.max(key.1), cell_max.2.max(key.2));
            buckets.entry(key).or_default().push(i as u32);
        }
        Ok(Self { points: points.to_vec(), cell, buckets, cell_min, cell_max })
    }

    /// Number of indexed points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// True when no points are indexed.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the nearest point to `query` (lowest index on ties).
    pub fn nearest(&self, query: &Point3<T>) -> Option<usize> {
        self.k_nearest(query, 1).first().map(|&(_, i)| i)
    }

    /// The `k` nearest points as `(distance, index)`, ordered by
    /// `(distance, index)` ascending. Returns all points when `k ≥ len`.
    pub fn k_nearest(&self, query: &Point3<T>, k: usize) -> Vec<(T, usize)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let center = cell_key(query, self.cell);
        let max_ring = self.max_ring(center);
        let mut best: Vec<(T, usize)> = Vec::with_capacity(k + 1);
        for ring in 0..=max_ring {
            if best.len() == k {
                // Everything unscanned lives at Chebyshev cell-distance
                // ≥ ring, hence at Euclidean distance ≥ (ring-1)·cell; the
                // extra cell absorbs rounding at cell boundaries.
                let bound = T::cast((ring.saturating_sub(1)) as f64) * self.cell;
                if best[k - 1].0 <= bound {
                    break;
                }
            }
            self.for_each_ring_cell(center, ring, |bucket| {
                for &i in bucket {
                    let i = i as usize;
                    let d = (self.points[i] - query).norm();
                    let entry = (d, i);
                    let pos = best
                        .binary_search_by(|probe| cmp_dist(*probe, entry))
                        .unwrap_err();
                    if pos < k {
                        best.insert(pos, entry);
                        best.truncate(k);
                    }
                }
            });
        }
        best
    }

    /// Indices of all points with `‖p − query‖ ≤ radius` (inclusive),
    /// ascending by index.
    pub fn within_radius(&self, query: &Point3<T>, radius: T) -> Vec<usize> {
        if !(radius >= T::zero()) || self.points.is_empty() {
            return Vec::new();
        }
        let lo = cell_key(&Point3::new(query.x - radius, query.y - radius, query.z - radius), self.cell);
        let hi = cell_key(&Point3::new(query.x + radius, query.y + radius, query.z + radius), self.cell);
        let mut out = Vec::new();
        for cx in (lo.0 - 1).max(self.cell_min.0)..=(hi.0 + 1).min(self.cell_max.0) {
            for cy in (lo.1 - 1).max(self.cell_min.1)..=(hi.1 + 1).min(self.cell_max.1) {
                for cz in (lo.2 - 1).max(self.cell_min.2)..=(hi.2 + 1).min(self.cell_max.2) {
                    if let Some(bucket) = self.buckets.get(&(cx, cy, cz)) {
                        for &i in bucket {
                            let i = i as usize;
                            if (self.points[i] - query).norm() <= radius {
                                out.push(i);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Largest Chebyshev cell distance from `center` to any occupied cell.
    fn max_ring(&self, center: CellKey) -> i64 {
        let span = |lo: i64, hi: i64, c: i64| (c - lo).abs().max(hi - c).max(0);
        span(self.cell_min.0, self.cell_max.0, center.0)
            .max(span(self.cell_min.1, self.cell_max.1, center.1))
            .max(span(self.cell_min.2, self.cell_max.2, center.2))
    }

    /// Visits every occupied bucket on the Chebyshev shell `ring` around
    /// `center`, clamped to the occupied bounding box.
    fn for_each_ring_cell(&self, center: CellKey, ring: i64, mut visit: impl FnMut(&[u32])) {
        let (lo, hi) = (self.cell_min, self.cell_max);
        let at = |cx: i64, cy: i64, cz: i64, visit: &mut dyn FnMut(&[u32])| {
            if cz >= lo.2 && cz <= hi.2 {
                if let Some(b) = self.buckets.get(&(cx, cy, cz)) {
                    visit(b);
                }
            }
        };
        for cx in (center.0 - ring).max(lo.0)..=(center.0 + ring).min(hi.0) {
            let dx = (cx - center.0).abs();
            for cy in (center.1 - ring).max(lo.1)..=(center.1 + ring).min(hi.1) {
                let dy = (cy - center.1).abs();
                if dx == ring || dy == ring {
                    // A full face of the shell: sweep the z column.
                    for cz in (center.2 - ring).max(lo.2)..=(center.2 + ring).min(hi.2) {
                        at(cx, cy, cz, &mut visit);
                    }
                } else {
                    // Interior column: only the two z caps lie on the shell
                    // (distinct because ring > 0 whenever dx, dy < ring).
                    at(cx, cy, center.2 - ring, &mut visit);
                    at(cx, cy, center.2 + ring, &mut visit);
                }
            }
        }
    }
}

/// Orders `(distance, index)` pairs ascending, index breaking ties.
fn cmp_dist<T: Scalar>(a: (T, usize), b: (T, usize)) -> std::cmp::Ordering {
    a.0.partial_cmp(&b.0)
        .expect("distances are finite")
        .then(a.1.cmp(&b.1))
}

fn cell_key<T: Scalar>(p: &Point3<T>, cell: T) -> CellKey {
    (
        Float::floor(p.x / cell).as_f64() as i64,
        Float::floor(p.y / cell).as_f64() as i64,
        Float::floor(p.z / cell).as_f64() as i64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect()
    }

    fn brute_k_nearest(points: &[Point3<f64>], q: &Point3<f64>, k: usize) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - q).norm(), i))
            .collect();
        all.sort_by(|a, b| cmp_dist(*a, *b));
        all.truncate(k);
        all
    }

    fn brute_radius(points: &[Point3<f64>], q: &Point3<f64>, r: f64) -> Vec<usize> {
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| (*p - q).norm() <= r)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn rejects_non_positive_cell() {
        assert!(SpatialIndex::<f64>::new(&[], 0.0).is_err());
        assert!(SpatialIndex::<f64>::new(&[], -1.0).is_err());
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = SpatialIndex::<f64>::new(&[], 0.5).unwrap();
        assert!(idx.nearest(&Point3::origin()).is_none());
        assert!(idx.within_radius(&Point3::origin(), 10.0).is_empty());
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..40 {
            let n = rng.random_range(1..200);
            let pts = random_cloud(&mut rng, n, 2.0);
            let cell = rng.random_range(0.05..1.5);
            let idx = SpatialIndex::new(&pts, cell).unwrap();
            for _ in 0..20 {
                let q = Point3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                );
                let k = rng.random_range(1..8);
                assert_eq!(idx.k_nearest(&q, k), brute_k_nearest(&pts, &q, k), "case {case}");
                let r = rng.random_range(0.0..2.5);
                assert_eq!(idx.within_radius(&q, r), brute_radius(&pts, &q, r), "case {case}");
            }
        }
    }

    #[test]
    fn duplicate_points_tie_break_to_lower_index() {
        let p = Point3::new(0.3, 0.3, 0.3);
        let pts = vec![p, Point3::new(5.0, 0.0, 0.0), p];
        let idx = SpatialIndex::new(&pts, 0.4).unwrap();
        assert_eq!(idx.nearest(&Point3::new(0.31, 0.3, 0.3)), Some(0));
        let two = idx.k_nearest(&Point3::new(0.31, 0.3, 0.3), 2);
        assert_eq!(two[0].1, 0);
        assert_eq!(two[1].1, 2);
    }

    #[test]
    fn radius_is_inclusive() {
        let pts = vec![Point3::new(1.0, 0.0, 0.0)];
        let idx = SpatialIndex::new(&pts, 0.5).unwrap();
        assert_eq!(idx.within_radius(&Point3::origin(), 1.0), vec![0]);
        assert!(idx.within_radius(&Point3::origin(), 0.999).is_empty());
    }

    #[test]
    fn far_queries_terminate_and_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = random_cloud(&mut rng, 50, 0.5);
        let idx = SpatialIndex::new(&pts, 0.1).unwrap();
        let q = Point3::new(100.0, -40.0, 7.0);
        assert_eq!(idx.k_nearest(&q, 3), brute_k_nearest(&pts, &q, 3));
    }
}
