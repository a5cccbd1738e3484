//! Rigid (SE(3)) transforms and their action on clouds.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use num_traits::Float;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A proper rigid motion `p ↦ R·p + t`.
///
/// Construction validates that `R` is a rotation: `RᵀR = I` and
/// `det R = +1`, both within [`Scalar::rotation_tolerance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Scalar> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

impl<T: Scalar> RigidTransform<T> {
    /// The identity motion.
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Builds a transform, validating the rotation block.
    pub fn try_new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, T> {
        let tol = T::rotation_tolerance();
        if !rotation.iter().all(|v| Float::is_finite(*v))
            || !translation.iter().all(|v| Float::is_finite(*v))
        {
            return Err(Error::InvalidConfig("non-finite transform entry".into()));
        }
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > tol {
            return Err(Error::DegenerateGeometry(format!(
                "rotation is not orthonormal (max deviation {:e})", ortho_err.as_f64()
            )));
        }
        let det = rotation.determinant();
        if Float::abs(det - T::one()) > tol {
            return Err(Error::DegenerateGeometry(format!(
                "rotation determinant {det} is not +1"
            )));
        }
        Ok(Self { rotation, translation })
    }

    /// Rotation block.
    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    /// Translation part.
    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    /// Applies the motion to one point.
    #[inline]
    pub fn apply_point(&self, p: &Point3<T>) -> Point3<T> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Rotates a direction (no translation), e.g. a normal.
    #[inline]
    pub fn apply_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    /// `self ∘ first`: the motion that applies `first`, then `self`.
    pub fn compose(&self, first: &Self) -> Self {
        Self {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    /// The inverse motion.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Row-major homogeneous 4×4 matrix.
    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Parses a homogeneous matrix, validating the rotation block and the
    /// `[0 0 0 1]` bottom row.
    pub fn from_homogeneous(m: &Matrix4<T>) -> Result<Self, T> {
        let tol = T::rotation_tolerance();
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)] - T::one()];
        if bottom.iter().any(|v| Float::abs(*v) > tol) {
            return Err(Error::InvalidConfig(
                "homogeneous matrix bottom row is not [0 0 0 1]".into(),
            ));
        }
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::try_new(rotation, translation)
    }

    /// Applies the motion to a whole cloud: points are moved, normals are
    /// rotated, features are carried over unchanged.
    pub fn transform_cloud(&self, cloud: &PointCloud<T>) -> PointCloud<T> {
        let points = cloud.points().iter().map(|p| self.apply_point(p)).collect();
        let mut out = PointCloud::new(points).expect("rigid motion of finite points is finite");
        if let Some(normals) = cloud.normals() {
            let rotated = normals.iter().map(|n| self.apply_vector(n)).collect();
            out = out
                .with_normals(rotated)
                .expect("rotation preserves unit length");
        }
        if let Some(features) = cloud.features() {
            out = out
                .with_features(features.clone())
                .expect("feature count unchanged");
        }
        out
    }

    /// Rotation about a unit axis by `angle` radians, plus translation.
    pub fn from_axis_angle(axis: &Vector3<T>, angle: T, translation: Vector3<T>) -> Self {
        let rotation = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(*axis),
            angle,
        )
        .into_inner();
        Self { rotation, translation }
    }
}
