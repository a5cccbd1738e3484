//! Crate-wide error type.

use crate::pipeline::IterationTrace;
use crate::scalar::Scalar;

/// Errors produced by the registration library.
#[derive(Debug, thiserror::Error)]
pub enum Error<T: Scalar> {
    /// A point cloud violated a structural invariant (non-finite
    /// coordinates, attribute length mismatch, non-unit normals, ...).
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    /// A configuration value is out of its documented domain.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The histogram descriptor needs normals and the cloud has none.
    #[error("descriptor requires normals but the cloud has none")]
    MissingNormals,

    /// An operation needs per-point features and the cloud has none.
    #[error("{0} requires per-point features but the cloud has none")]
    MissingFeatures(&'static str),

    /// Downsampling produced an empty level before reaching the requested
    /// depth.
    #[error("pyramid level {level} is empty; input too sparse for the requested depth")]
    EmptyPyramidLevel { level: usize },

    /// An operation received fewer items than its contract requires.
    #[error("{what} needs at least {needed} {unit}, got {got}")]
    UndersizedInput {
        what: &'static str,
        needed: usize,
        got: usize,
        unit: &'static str,
    },

    /// The input geometry does not constrain the requested estimate
    /// (rank-deficient covariance, too few effective pairs, ...).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// The similarity floor rejected every point before clustering.
    #[error("clustering rejected every point (similarity floor too high)")]
    EmptyClustering,

    /// A local-stage decision was requested without the previous stage
    /// score it compares against.
    #[error("local decision needs the previous stage score")]
    MissingPreviousScore,

    /// A summary metric was requested over an empty collection.
    #[error("metric over an empty set: {0}")]
    EmptyMetric(&'static str),

    /// The pipeline could not produce a usable transform. Carries the
    /// partial trace for diagnosis.
    #[error("registration failed at {stage}: {reason}")]
    RegistrationFailure {
        stage: String,
        reason: String,
        trace: Box<IterationTrace<T>>,
    },
}

/// Crate-wide result alias.
pub type Result<V, T> = std::result::Result<V, Error<T>>;
