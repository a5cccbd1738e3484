//! Scalar abstraction for the geometry kernels.
//!
//! Everything numeric in this crate is generic over [`Scalar`], a small
//! trait alias over the [`num_traits`] float traits plus nalgebra's
//! [`RealField`](nalgebra::RealField) so the same code instantiates for
//! `f32` and `f64`. Concrete `f64` aliases live at the crate root.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by every algorithm in this crate.
///
/// The bound set is the intersection of what nalgebra's decompositions
/// need (`RealField`) and what plain numeric code needs (`Float`,
/// conversions). Implemented for `f32` and `f64`.
pub trait Scalar:
    nalgebra::RealField + Float + FromPrimitive + ToPrimitive + Default + Copy
{
    /// Lossy conversion from `f64`, for constants and configuration values.
    ///
    /// Panics only if the value is not representable at all (never for
    /// finite inputs on `f32`/`f64`).
    #[inline]
    fn cast(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("finite f64 must convert to scalar")
    }

    /// Widening conversion to `f64` for reporting and aggregation.
    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar must convert to f64")
    }

    /// Tolerance used when validating rotation matrices.
    ///
    /// `1e-9` as long as the type can represent it meaningfully, otherwise
    /// scaled up with machine epsilon (so `f32` rotations remain
    /// constructible).
    #[inline]
    fn rotation_tolerance() -> Self {
        Float::max(Self::cast(1e-9), <Self as Float>::epsilon() * Self::cast(100.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
