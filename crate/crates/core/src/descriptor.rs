//! Pluggable per-point feature backends.
//!
//! Two backends feed the matching layer:
//!
//! - [`DescriptorBackend::Histogram`]: a rotation-invariant local histogram
//!   of (neighbor-normal angle, normalized neighbor distance). Cheap,
//!   data-driven, needs normals.
//! - [`DescriptorBackend::Oracle`]: a test backend that turns pre-planted
//!   per-point correspondence keys (e.g. scene-frame coordinates written by
//!   the synthetic generator) into features, with controllable Gaussian
//!   key noise and an exact fraction of corrupted points. It lets suites
//!   dial in the inlier ratio precisely, decoupling pipeline behavior from
//!   descriptor power.

use nalgebra::{Point3, Vector3};
use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::{FeatureSet, PointCloud};
use crate::error::{Error, Result};
use crate::index::SpatialIndex;
use crate::scalar::Scalar;

/// Angular bins of the histogram descriptor (angle ∈ [0, π]).
pub const ANGULAR_BINS: usize = 11;
/// Radial bins of the histogram descriptor (distance/radius ∈ [0, 1]).
pub const RADIAL_BINS: usize = 5;
/// Feature width of the histogram backend.
pub const HISTOGRAM_WIDTH: usize = ANGULAR_BINS * RADIAL_BINS;

/// Parameters of the geometric histogram backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramParams<T: Scalar> {
    /// Neighborhood radius in meters. A good default is 2.5× the voxel
    /// size of the level being described.
    pub radius: T,
}

/// Parameters of the oracle backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleParams<T: Scalar> {
    /// Standard deviation of Gaussian jitter added to the key (meters).
    pub noise: T,
    /// Fraction of points whose features are replaced by random unit
    /// vectors; exactly ⌈fraction·N⌉ points are corrupted.
    pub outlier_fraction: f64,
    /// Seed for jitter and corruption choices.
    pub seed: u64,
    /// Key normalization scale (meters); only affects feature geometry,
    /// not which points correspond.
    pub scale: T,
}

impl<T: Scalar> Default for OracleParams<T> {
    fn default() -> Self {
        Self { noise: T::zero(), outlier_fraction: 0.0, seed: 0, scale: T::one() }
    }
}

/// A feature backend choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DescriptorBackend<T: Scalar> {
    /// Local geometry histogram (needs normals).
    Histogram(HistogramParams<T>),
    /// Correspondence-key oracle (needs pre-planted features as keys).
    Oracle(OracleParams<T>),
}

/// Computes features for every point of `cloud`.
///
/// `index` must be built over the same points; the histogram backend uses
/// it for radius queries, the oracle backend ignores it. Returns a copy of
/// the cloud with the `features` attribute replaced.
pub fn describe<T: Scalar>(
    cloud: &PointCloud<T>,
    backend: &DescriptorBackend<T>,
    index: &SpatialIndex<T>,
) -> Result<PointCloud<T>, T> {
    let features = match backend {
        DescriptorBackend::Histogram(params) => histogram_features(cloud, params, index)?,
        DescriptorBackend::Oracle(params) => oracle_features(cloud, params)?,
    };
    let mut out = cloud.clone();
    out.set_features(features);
    Ok(out)
}

fn histogram_features<T: Scalar>(
    cloud: &PointCloud<T>,
    params: &HistogramParams<T>,
    index: &SpatialIndex<T>,
) -> Result<FeatureSet<T>, T> {
    if !(params.radius > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "histogram radius must be positive, got {}",
            params.radius
        )));
    }
    let normals = cloud.normals().ok_or(Error::MissingNormals)?;
    let mut data = Vec::with_capacity(cloud.len() * HISTOGRAM_WIDTH);
    let angular_scale = T::cast(ANGULAR_BINS as f64) / T::pi();
    for (i, p) in cloud.points().iter().enumerate() {
        let mut hist = [T::zero(); HISTOGRAM_WIDTH];
        // The query point itself is always in its own neighborhood
        // (angle 0, distance 0), so the histogram is never empty.
        for j in index.within_radius(p, params.radius) {
            let cos = nalgebra::clamp(normals[i].dot(&normals[j]), -T::one(), T::one());
            let angle = Float::acos(cos);
            let a_bin = (Float::floor(angle * angular_scale).as_f64() as usize).min(ANGULAR_BINS - 1);
            let dist = (cloud.point(j) - p).norm();
            let r = dist / params.radius * T::cast(RADIAL_BINS as f64);
            let r_bin = (Float::floor(r).as_f64() as usize).min(RADIAL_BINS - 1);
            hist[a_bin * RADIAL_BINS + r_bin] += T::one();
        }
        let norm = Float::sqrt(hist.iter().fold(T::zero(), |acc, v| acc + *v * *v));
        data.extend(hist.iter().map(|v| *v / norm));
    }
    FeatureSet::new(HISTOGRAM_WIDTH, data)
}

fn oracle_features<T: Scalar>(
    cloud: &PointCloud<T>,
    params: &OracleParams<T>,
) -> Result<FeatureSet<T>, T> {
    if !(0.0..=1.0).contains(&params.outlier_fraction) {
        return Err(Error::InvalidConfig(format!(
            "outlier fraction must be in [0,1], got {}",
            params.outlier_fraction
        )));
    }
    if params.noise < T::zero() || !(params.scale > T::zero()) {
        return Err(Error::InvalidConfig(
            "oracle noise must be ≥ 0 and scale > 0".into(),
        ));
    }
    let keys = cloud
        .features()
        .ok_or(Error::MissingFeatures("the oracle descriptor"))?;
    let n = cloud.len();
    let width = keys.width() + 1;

    // Choose exactly ⌈fraction·N⌉ corrupted points with a seeded partial
    // Fisher-Yates shuffle; independent of point-processing order.
    let m = ((params.outlier_fraction * n as f64).ceil() as usize).min(n);
    let mut corrupted = vec![false; n];
    if m > 0 {
        let mut pick_rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut order: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = pick_rng.random_range(i..n);
            order.swap(i, j);
            corrupted[order[i]] = true;
        }
    }

    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        // Per-point RNG stream derived from (seed, index): deterministic
        // no matter how points would be partitioned across threads.
        let mut rng = ChaCha8Rng::seed_from_u64(
            params
                .seed
                .wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let row: Vec<T> = if corrupted[i] {
            random_unit_vector(&mut rng, width)
        } else {
            let mut lifted: Vec<T> = keys
                .row(i)
                .iter()
                .map(|k| {
                    let jitter = if params.noise > T::zero() {
                        params.noise * T::cast(standard_normal(&mut rng))
                    } else {
                        T::zero()
                    };
                    (*k + jitter) / params.scale
                })
                .collect();
            lifted.push(T::one());
            let norm = Float::sqrt(lifted.iter().fold(T::zero(), |a, v| a + *v * *v));
            lifted.into_iter().map(|v| v / norm).collect()
        };
        data.extend(row);
    }
    FeatureSet::new(width, data)
}

/// Standard normal sample via Box-Muller (two uniform draws).
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_unit_vector<T: Scalar>(rng: &mut ChaCha8Rng, width: usize) -> Vec<T> {
    loop {
        let v: Vec<T> = (0..width).map(|_| T::cast(standard_normal(rng))).collect();
        let norm = Float::sqrt(v.iter().fold(T::zero(), |a, x| a + *x * *x));
        if norm > T::cast(1e-6) {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Estimates unit normals by PCA over the `k` nearest neighbors, oriented
/// toward `viewpoint`. A plain fallback for inputs that arrive without
/// normals; synthetic scenes carry exact ones.
pub fn estimate_normals<T: Scalar>(
    cloud: &PointCloud<T>,
    k: usize,
    viewpoint: &Point3<T>,
) -> Result<PointCloud<T>, T> {
    if k < 3 {
        return Err(Error::InvalidConfig(format!(
            "normal estimation needs k ≥ 3 neighbors, got {k}"
        )));
    }
    if cloud.len() < 3 {
        return Err(Error::UndersizedInput {
            what: "normal estimation",
            needed: 3,
            got: cloud.len(),
            unit: "points",
        });
    }
    let (lo, hi) = cloud.bounding_box().expect("nonempty");
    let diag = (hi - lo).norm();
    let cell = if diag > T::zero() {
        diag / T::cast((cloud.len() as f64).cbrt().max(1.0))
    } else {
        T::one()
    };
    let index = SpatialIndex::new(cloud.points(), cell)?;
    let mut normals = Vec::with_capacity(cloud.len());
    for p in cloud.points() {
        let neighbors = index.k_nearest(p, k);
        let inv = T::one() / T::from_usize(neighbors.len()).unwrap();
        let mut mean = Vector3::zeros();
        for &(_, j) in &neighbors {
            mean += cloud.point(j).coords;
        }
        mean *= inv;
        let mut cov = nalgebra::Matrix3::zeros();
        for &(_, j) in &neighbors {
            let d = cloud.point(j).coords - mean;
            cov += d * d.transpose();
        }
        let eigen = nalgebra::SymmetricEigen::new(cov);
        let mut min_idx = 0;
        for c in 1..3 {
            if eigen.eigenvalues[c] < eigen.eigenvalues[min_idx] {
                min_idx = c;
            }
        }
        let mut n: Vector3<T> = eigen.eigenvectors.column(min_idx).into_owned();
        let norm = n.norm();
        if norm > T::zero() {
            n /= norm;
        } else {
            n = Vector3::z();
        }
        if n.dot(&(viewpoint - p)) < T::zero() {
            n = -n;
        }
        normals.push(n);
    }
    cloud.clone().with_normals(normals)
}
