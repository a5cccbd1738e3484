//! Rigid point cloud registration with a dynamic two-stage pipeline.
//!
//! The library solves for the rotation and translation aligning two 3D
//! point clouds. Registration runs in two stages:
//!
//! 1. **Global**: both clouds are downsampled into a voxel pyramid
//!    ([`pyramid`]), described per point ([`descriptor`]), and matched
//!    sparsely — coarse node pairing by optimal transport, then
//!    point-level matching inside node patches ([`matching`]). A weighted
//!    alignment over the per-patch candidates picks the best rigid motion
//!    ([`solver`]).
//! 2. **Local**: when a spatial-consistency classifier ([`classifier`])
//!    is not yet satisfied, the matched inliers are clustered and fresh
//!    registration nodes are recruited around the cluster centers
//!    ([`refine`]), then matching and solving repeat with local
//!    parameters, iterating until the score stops improving.
//!
//! The [`pipeline`] module wires the stages together and records a
//! per-stage trace; [`eval`] supplies the usual error metrics and two
//! forward-only evaluation losses.
//!
//! All geometry is generic over the [`scalar::Scalar`] precision
//! (`f32`/`f64`); the crate root exports `f64` aliases of the main types
//! for everyday use.

pub mod classifier;
pub mod cloud;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod index;
pub mod matching;
pub mod pipeline;
pub mod pyramid;
pub mod refine;
pub mod scalar;
pub mod solver;
pub mod transform;

/// Double-precision point cloud.
pub type PointCloud = cloud::PointCloud<f64>;
/// Double-precision feature block.
pub type FeatureSet = cloud::FeatureSet<f64>;
/// Double-precision rigid motion.
pub type RigidTransform = transform::RigidTransform<f64>;
/// Double-precision sampling pyramid.
pub type SamplingPyramid = pyramid::SamplingPyramid<f64>;
/// Double-precision correspondence set.
pub type CorrespondenceSet = matching::CorrespondenceSet<f64>;
/// Double-precision pipeline configuration.
pub type PipelineConfig = pipeline::PipelineConfig<f64>;
/// Double-precision registration trace.
pub type IterationTrace = pipeline::IterationTrace<f64>;
/// Errors of the double-precision instantiation.
pub type Error = error::Error<f64>;
/// Result alias of the double-precision instantiation.
pub type Result<V> = std::result::Result<V, Error>;
