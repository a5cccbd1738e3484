//! Point cloud container with optional per-point attributes.

use nalgebra::{Point3, Vector3};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense per-point feature vectors with a fixed width.
///
/// Stored row-major in one flat buffer so pairwise distance loops stay
/// cache-friendly.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T: Scalar> {
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureSet<T> {
    /// Builds a feature set from row-major data.
    ///
    /// `data.len()` must be a multiple of `width`, `width` must be
    /// positive, and every entry must be finite.
    pub fn new(width: usize, data: Vec<T>) -> Result<Self, T> {
        if width == 0 {
            return Err(Error::InvalidCloud("feature width must be positive".into()));
        }
        if data.len() % width != 0 {
            return Err(Error::InvalidCloud(format!(
                "feature buffer length {} is not a multiple of width {width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !Float::is_finite(*v)) {
            return Err(Error::InvalidCloud("non-finite feature entry".into()));
        }
        Ok(Self { width, data })
    }

    /// Number of feature rows.
    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    /// True when there are no rows.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Feature dimensionality.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Borrow row `i`.
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    /// Rows for the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.width);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { width: self.width, data }
    }
}

/// Euclidean distance between two feature rows of equal width.
pub fn feature_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        let d = *x - *y;
        acc = acc + d * d;
    }
    Float::sqrt(acc)
}

/// A 3D point cloud with optional unit normals and optional features.
///
/// Invariants enforced at construction:
/// - all coordinates are finite,
/// - attribute arrays (when present) have the same length as the points,
/// - normals are unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T: Scalar> {
    points: Vec<Point3<T>>,
    normals: Option<Vec<Vector3<T>>>,
    features: Option<FeatureSet<T>>,
}

impl<T: Scalar> PointCloud<T> {
    /// Builds a cloud from bare points. Rejects non-finite coordinates.
    pub fn new(points: Vec<Point3<T>>) -> Result<Self, T> {
        for (i, p) in points.iter().enumerate() {
            if !p.coords.iter().all(|c| Float::is_finite(*c)) {
                return Err(Error::InvalidCloud(format!(
                    "non-finite coordinate at point {i}"
                )));
            }
        }
        Ok(Self { points, normals: None, features: None })
    }

    /// Attaches unit normals (one per point).
    pub fn with_normals(mut self, normals: Vec<Vector3<T>>) -> Result<Self, T> {
        if normals.len() != self.points.len() {
            return Err(Error::InvalidCloud(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        let tol = Float::max(T::cast(1e-6), <T as Float>::epsilon() * T::cast(10.0));
        for (i, n) in normals.iter().enumerate() {
            if !n.iter().all(|c| Float::is_finite(*c)) {
                return Err(Error::InvalidCloud(format!("non-finite normal at point {i}")));
            }
            if Float::abs(n.norm() - T::one()) > tol {
                return Err(Error::InvalidCloud(format!(
                    "normal at point {i} is not unit length"
                )));
            }
        }
        self.normals = Some(normals);
        Ok(self)
    }

    /// Attaches per-point features (one row per point).
    pub fn with_features(mut self, features: FeatureSet<T>) -> Result<Self, T> {
        if features.len() != self.points.len() {
            return Err(Error::InvalidCloud(format!(
                "{} feature rows for {} points",
                features.len(),
                self.points.len()
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// True when the cloud has no points.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// All points.
    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    /// Point `i`.
    pub fn point(&self, i: usize) -> Point3<T> {
        self.points[i]
    }

    /// Normals, when present.
    pub fn normals(&self) -> Option<&[Vector3<T>]> {
        self.normals.as_deref()
    }

    /// Features, when present.
    pub fn features(&self) -> Option<&FeatureSet<T>> {
        self.features.as_ref()
    }

    /// Subset of the cloud (points plus attributes), in index order.
    ///
    /// Panics if an index is out of range, mirroring slice indexing.
    pub fn select(&self, indices: &[usize]) -> Self {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let normals = self
            .normals
            .as_ref()
            .map(|ns| indices.iter().map(|&i| ns[i]).collect());
        let features = self.features.as_ref().map(|fs| fs.select(indices));
        Self { points, normals, features }
    }

    /// Arithmetic mean of the points. `None` for an empty cloud.
    pub fn centroid(&self) -> Option<Point3<T>> {
        if self.points.is_empty() {
            return None;
        }
        let mut acc = Vector3::zeros();
        for p in &self.points {
            acc += p.coords;
        }
        Some(Point3::from(acc / T::from_usize(self.points.len()).unwrap()))
    }

    /// Axis-aligned bounding box `(min, max)`. `None` for an empty cloud.
    pub fn bounding_box(&self) -> Option<(Point3<T>, Point3<T>)> {
        let first = self.points.first()?;
        let mut lo = *first;
        let mut hi = *first;
        for p in &self.points {
            for k in 0..3 {
                lo[k] = Float::min(lo[k], p[k]);
                hi[k] = Float::max(hi[k], p[k]);
            }
        }
        Some((lo, hi))
    }

    /// Replaces the features wholesale (used by descriptor backends).
    pub(crate) fn set_features(&mut self, features: FeatureSet<T>) {
        debug_assert_eq!(features.len(), self.points.len());
        self.features = Some(features);
    }

    /// Drops normals/features, keeping geometry only.
    pub fn strip_attributes(mut self) -> Self {
        self.normals = None;
        self.features = None;
        self
    }
}
