//! Procedural benchmark scenes with exact ground truth.
//!
//! A scene is a set of rectangular panels — floors, walls, and the faces
//! of boxes — sampled into points by Poisson-disk dart throwing. Each
//! sampled point carries the panel's outward normal and, as its feature
//! vector, its own scene-frame coordinates: a correspondence key that
//! lets the oracle descriptor stand in for a learned one while the true
//! matching remains known by construction.
//!
//! [`generate_pair`] cuts two windows out of one sampled scene, tunes
//! the window offset until the shared fraction hits the requested
//! overlap, pads each view with off-surface clutter carrying random
//! keys, jitters the geometry, and moves the target view by a random
//! rigid motion of the requested magnitude. Every random choice is
//! seeded, so a spec maps to bit-identical outputs on every run.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};
use scanreg::cloud::FeatureSet;
use scanreg::index::SpatialIndex;
use scanreg::matching::CorrespondenceSet as GenericCorrespondences;
use scanreg::{PointCloud, RigidTransform};

use crate::{HarnessError, Result};

/// Correspondence set alias at harness precision.
pub type Correspondences = GenericCorrespondences<f64>;

/// Mutual-nearest partners farther apart than this do not count toward
/// measured overlap (meters).
pub const OVERLAP_RADIUS: f64 = 0.05;

/// Scene layout family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Two walls, a floor, and furniture boxes.
    Room,
    /// A long floor between two parallel walls with crates along them.
    Corridor,
    /// An open ground strip with a low wall and free-standing boxes.
    OutdoorStrip,
}

impl SceneKind {
    /// All kinds, in the order suites cycle through them.
    pub const ALL: [SceneKind; 3] = [SceneKind::Room, SceneKind::Corridor, SceneKind::OutdoorStrip];
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::Room => "room",
            SceneKind::Corridor => "corridor",
            SceneKind::OutdoorStrip => "outdoor-strip",
        })
    }
}

impl FromStr for SceneKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "room" => Ok(SceneKind::Room),
            "corridor" => Ok(SceneKind::Corridor),
            "outdoor-strip" => Ok(SceneKind::OutdoorStrip),
            other => Err(HarnessError::Config(format!(
                "unknown scene kind {other:?}; expected room, corridor, or outdoor-strip"
            ))),
        }
    }
}

/// Everything that determines one synthetic pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    /// Scene layout family.
    pub kind: SceneKind,
    /// Target shared fraction of the two views, in (0, 1]. Measured as
    /// mutual-nearest coverage at [`OVERLAP_RADIUS`] over the surface
    /// points (clutter is planted per view and never shared); generation
    /// lands within ±0.05 of the target or fails.
    pub overlap: f64,
    /// Standard deviation of Gaussian position jitter (meters). Jitter
    /// moves geometry only; correspondence keys keep their clean values.
    pub noise: f64,
    /// Fraction of each view consisting of off-surface clutter points
    /// with random keys, in [0, 1).
    pub outlier_fraction: f64,
    /// Upper bound of the random ground-truth rotation (degrees).
    pub max_rotation_deg: f64,
    /// Upper bound of the random ground-truth translation (meters).
    pub max_translation: f64,
    /// Seed behind every random choice of this pair.
    pub seed: u64,
}

impl SceneSpec {
    /// Checks the field ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return Err(HarnessError::Config(format!(
                "overlap target must lie in (0, 1], got {}",
                self.overlap
            )));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(HarnessError::Config(format!(
                "noise must be non-negative and finite, got {}",
                self.noise
            )));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(HarnessError::Config(format!(
                "outlier fraction must lie in [0, 1), got {}",
                self.outlier_fraction
            )));
        }
        // Overlap counts shared surface against full views, clutter included,
        // so clutter puts a hard ceiling on how much of a pair can agree.
        // (overlap = 1 is exempt: it requests two identical views.)
        let ceiling = 1.0 - self.outlier_fraction;
        if self.overlap < 1.0 && self.overlap > ceiling + OVERLAP_MARGIN {
            return Err(HarnessError::Config(format!(
                "overlap target {} is not achievable with an outlier fraction of {}: \
                 clutter caps the shared fraction of a view pair at {ceiling:.2}",
                self.overlap, self.outlier_fraction
            )));
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(HarnessError::Config(format!(
                "max rotation must lie in [0, 180] degrees, got {}",
                self.max_rotation_deg
            )));
        }
        if !(self.max_translation >= 0.0) || !self.max_translation.is_finite() {
            return Err(HarnessError::Config(format!(
                "max translation must be non-negative and finite, got {}",
                self.max_translation
            )));
        }
        Ok(())
    }
}

/// One generated benchmark pair with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    /// Source view, in the scene frame.
    pub src: PointCloud,
    /// Target view, moved by `gt`.
    pub tgt: PointCloud,
    /// Exact motion such that `gt · src-frame point = tgt-frame point`.
    pub gt: RigidTransform,
    /// Index pairs of the surface points present in both views
    /// (clutter excluded), for alignment-RMSE evaluation.
    pub gt_corr: Correspondences,
}

// ---------------------------------------------------------------------
// Panels and their sampling
// ---------------------------------------------------------------------

/// A rectangle in space: `origin + s·u + t·v` for (s, t) ∈ [0,1]².
struct Panel {
    origin: Point3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    normal: Vector3<f64>,
}

impl Panel {
    fn new(origin: Point3<f64>, u: Vector3<f64>, v: Vector3<f64>) -> Self {
        let normal = u.cross(&v).normalize();
        Panel { origin, u, v, normal }
    }

    fn area(&self) -> f64 {
        self.u.cross(&self.v).norm()
    }
}

/// Derives an independent random stream from a seed and a tag.
fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    // SplitMix64 finalizer: decorrelates consecutive seeds and tags.
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

const TAG_LAYOUT: u64 = 1;
const TAG_PANEL_BASE: u64 = 100;
const TAG_MOTION: u64 = 2;
const TAG_VIEW_CLUTTER: u64 = 3;
const TAG_VIEW_NOISE: u64 = 4;
const TAG_VIEW_SHUFFLE: u64 = 5;

/// Poisson-disk samples of the rectangle [0,w]×[0,h] with spacing `r`
/// (Bridson dart throwing on a background grid).
fn poisson_disk(w: f64, h: f64, r: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let cell = r / std::f64::consts::SQRT_2;
    let nx = (w / cell).ceil().max(1.0) as usize;
    let ny = (h / cell).ceil().max(1.0) as usize;
    let mut grid: Vec<Option<usize>> = vec![None; nx * ny];
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut active: Vec<usize> = Vec::new();

    let cell_of = |x: f64, y: f64| {
        let cx = ((x / cell) as usize).min(nx - 1);
        let cy = ((y / cell) as usize).min(ny - 1);
        cy * nx + cx
    };
    let fits = |samples: &[(f64, f64)], grid: &[Option<usize>], x: f64, y: f64| {
        let cx = ((x / cell) as usize).min(nx - 1) as isize;
        let cy = ((y / cell) as usize).min(ny - 1) as isize;
        for gy in (cy - 2).max(0)..=(cy + 2).min(ny as isize - 1) {
            for gx in (cx - 2).max(0)..=(cx + 2).min(nx as isize - 1) {
                if let Some(s) = grid[gy as usize * nx + gx as usize] {
                    let (sx, sy) = samples[s];
                    if (sx - x).powi(2) + (sy - y).powi(2) < r * r {
                        return false;
                    }
                }
            }
        }
        true
    };
    let push = |samples: &mut Vec<(f64, f64)>,
                grid: &mut Vec<Option<usize>>,
                active: &mut Vec<usize>,
                x: f64,
                y: f64| {
        let id = samples.len();
        samples.push((x, y));
        grid[cell_of(x, y)] = Some(id);
        active.push(id);
    };

    let x0 = rng.random_range(0.0..w.max(f64::MIN_POSITIVE));
    let y0 = rng.random_range(0.0..h.max(f64::MIN_POSITIVE));
    push(&mut samples, &mut grid, &mut active, x0, y0);

    while !active.is_empty() {
        let slot = rng.random_range(0..active.len());
        let (ax, ay) = samples[active[slot]];
        let mut placed = false;
        for _ in 0..20 {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let radius = r * (1.0 + rng.random_range(0.0..1.0));
            let x = ax + radius * angle.cos();
            let y = ay + radius * angle.sin();
            if x < 0.0 || x > w || y < 0.0 || y > h {
                continue;
            }
            if fits(&samples, &grid, x, y) {
                push(&mut samples, &mut grid, &mut active, x, y);
                placed = true;
                break;
            }
        }
        if !placed {
            active.swap_remove(slot);
        }
    }
    samples
}

/// A sampled scene: positions, outward normals, and the scene-frame
/// coordinates that double as correspondence keys.
struct Scene {
    points: Vec<Point3<f64>>,
    normals: Vec<Vector3<f64>>,
    /// Extent of the scene along x, the axis views slide along.
    length: f64,
}

/// Point spacing of the surface sampling (meters).
const SPACING: f64 = 0.16;

/// Side faces and top of an axis-yawed box standing on z = `z0`.
fn box_panels(center: (f64, f64), yaw: f64, half: (f64, f64), height: f64, z0: f64) -> Vec<Panel> {
    let (cx, cy) = center;
    let (hx, hy) = half;
    let ex = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let ey = Vector3::new(-yaw.sin(), yaw.cos(), 0.0);
    let ez = Vector3::z();
    let base = Point3::new(cx, cy, z0);
    let top = Point3::new(cx, cy, z0 + height);
    vec![
        // Top face, normal +z.
        Panel::new(top - ex * hx - ey * hy, ex * (2.0 * hx), ey * (2.0 * hy)),
        // +ex side.
        Panel::new(base + ex * hx - ey * hy, ey * (2.0 * hy), ez * height),
        // −ex side.
        Panel::new(base - ex * hx + ey * hy, ey * (-2.0 * hy), ez * height),
        // +ey side.
        Panel::new(base + ex * hx + ey * hy, ex * (-2.0 * hx), ez * height),
        // −ey side.
        Panel::new(base - ex * hx - ey * hy, ex * (2.0 * hx), ez * height),
    ]
}

fn layout(kind: SceneKind, rng: &mut ChaCha8Rng) -> (Vec<Panel>, f64) {
    let mut panels = Vec::new();
    let length;
    match kind {
        SceneKind::Room => {
            length = 5.0;
            let depth = 4.0;
            let wall = 2.2;
            // Floor, normal +z.
            panels.push(Panel::new(
                Point3::origin(),
                Vector3::new(length, 0.0, 0.0),
                Vector3::new(0.0, depth, 0.0),
            ));
            // Back wall along x at y = 0, normal +y (into the room).
            //
            // All walls run along x — the axis the view windows slide
            // on — so the point mass inside a window varies smoothly
            // with the window position and any overlap target is
            // reachable. A wall across x would enter or leave a window
            // all at once and punch an unreachable gap into the
            // overlap range.
            panels.push(Panel::new(
                Point3::new(0.0, 0.0, 0.0),
                Vector3::new(0.0, 0.0, wall),
                Vector3::new(length, 0.0, 0.0),
            ));
            // Partial front wall at y = depth, normal −y.
            panels.push(Panel::new(
                Point3::new(1.5, depth, 0.0),
                Vector3::new(length - 1.5, 0.0, 0.0),
                Vector3::new(0.0, 0.0, wall),
            ));
            // A table and a crate at seeded spots.
            let tx = rng.random_range(1.2..length - 1.2);
            let ty = rng.random_range(1.2..depth - 1.0);
            let tyaw = rng.random_range(0.0..std::f64::consts::PI);
            panels.extend(box_panels((tx, ty), tyaw, (0.7, 0.45), 0.75, 0.0));
            let bx = rng.random_range(0.8..length - 0.8);
            let by = rng.random_range(0.8..depth - 0.8);
            let byaw = rng.random_range(0.0..std::f64::consts::PI);
            panels.extend(box_panels((bx, by), byaw, (0.4, 0.4), 1.0, 0.0));
        }
        SceneKind::Corridor => {
            length = 9.0;
            let width = 2.4;
            let wall = 2.4;
            panels.push(Panel::new(
                Point3::origin(),
                Vector3::new(length, 0.0, 0.0),
                Vector3::new(0.0, width, 0.0),
            ));
            panels.push(Panel::new(
                Point3::new(0.0, 0.0, 0.0),
                Vector3::new(0.0, 0.0, wall),
                Vector3::new(length, 0.0, 0.0),
            ));
            panels.push(Panel::new(
                Point3::new(0.0, width, 0.0),
                Vector3::new(length, 0.0, 0.0),
                Vector3::new(0.0, 0.0, wall),
            ));
            // Lockers stood along the walls.
            for k in 0..3 {
                let x = rng.random_range(0.8..length - 0.8);
                let near = k % 2 == 0;
                let y = if near { 0.45 } else { width - 0.45 };
                let yaw = rng.random_range(-0.15..0.15);
                panels.extend(box_panels((x, y), yaw, (0.35, 0.3), 1.4, 0.0));
            }
        }
        SceneKind::OutdoorStrip => {
            length = 12.0;
            let depth = 5.0;
            panels.push(Panel::new(
                Point3::origin(),
                Vector3::new(length, 0.0, 0.0),
                Vector3::new(0.0, depth, 0.0),
            ));
            // A low boundary wall along the far side.
            panels.push(Panel::new(
                Point3::new(0.5, depth - 0.4, 0.0),
                Vector3::new(0.0, 0.0, 1.2),
                Vector3::new(length - 1.0, 0.0, 0.0),
            ));
            // Scattered crates and planters.
            for _ in 0..4 {
                let x = rng.random_range(0.9..length - 0.9);
                let y = rng.random_range(0.9..depth - 1.2);
                let yaw = rng.random_range(0.0..std::f64::consts::PI);
                let hx = rng.random_range(0.3..0.6);
                let hy = rng.random_range(0.3..0.6);
                let h = rng.random_range(0.5..1.1);
                panels.extend(box_panels((x, y), yaw, (hx, hy), h, 0.0));
            }
        }
    }
    (panels, length)
}

fn sample_scene(kind: SceneKind, seed: u64) -> Scene {
    let mut layout_rng = stream(seed, TAG_LAYOUT);
    let (panels, length) = layout(kind, &mut layout_rng);
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (i, panel) in panels.iter().enumerate() {
        if panel.area() <= 0.0 {
            continue;
        }
        let mut rng = stream(seed, TAG_PANEL_BASE + i as u64);
        let w = panel.u.norm();
        let h = panel.v.norm();
        let uu = panel.u / w;
        let vv = panel.v / h;
        for (s, t) in poisson_disk(w, h, SPACING, &mut rng) {
            points.push(panel.origin + uu * s + vv * t);
            normals.push(panel.normal);
        }
    }
    Scene { points, normals, length }
}

// ---------------------------------------------------------------------
// Views
// ---------------------------------------------------------------------

/// Indices of scene points with x inside [lo, hi].
fn window_indices(scene: &Scene, lo: f64, hi: f64) -> Vec<usize> {
    (0..scene.points.len())
        .filter(|&i| {
            let x = scene.points[i].x;
            x >= lo && x <= hi
        })
        .collect()
}

/// Clutter points a view of `real` surface points will receive.
fn clutter_count(real: usize, outlier_fraction: f64) -> usize {
    ((outlier_fraction / (1.0 - outlier_fraction)) * real as f64).round() as usize
}

/// Predicted mutual-nearest coverage of two x-windows: both views keep
/// exactly the scene points inside their window, so the surface points
/// they share is the count in the intersection window, and the planted
/// clutter enlarges the views without ever pairing up.
fn window_coverage(scene: &Scene, w: f64, delta: f64, outlier_fraction: f64) -> f64 {
    let a = window_indices(scene, 0.0, w).len();
    let b = window_indices(scene, delta, delta + w).len();
    let shared = window_indices(scene, delta, w).len();
    let total = a + clutter_count(a, outlier_fraction) + b + clutter_count(b, outlier_fraction);
    if total == 0 {
        0.0
    } else {
        2.0 * shared as f64 / total as f64
    }
}

/// How far inside ±0.05 the generator aims; the margin absorbs the later
/// geometry jitter.
const OVERLAP_MARGIN: f64 = 0.04;

/// Finds the window shift δ whose coverage hits the overlap target.
fn solve_window_shift(scene: &Scene, w: f64, spec: &SceneSpec) -> Result<f64> {
    let target = spec.overlap;
    if target >= 1.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0f64;
    let mut hi = (scene.length - w).max(0.0);
    // Coincident windows are reserved for overlap = 1; anything lower must
    // shift, so δ = 0 is a bisection bound, never an answer.
    let at_lo = window_coverage(scene, w, lo, spec.outlier_fraction);
    let at_hi = window_coverage(scene, w, hi, spec.outlier_fraction);
    if at_hi > target + OVERLAP_MARGIN || at_lo < target - OVERLAP_MARGIN {
        return Err(HarnessError::Generation(format!(
            "overlap target {target} unreachable: the window coverage only spans \
             [{at_hi:.3}, {at_lo:.3}]"
        )));
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        let c = window_coverage(scene, w, mid, spec.outlier_fraction);
        if mid > 0.0 && (c - target).abs() <= OVERLAP_MARGIN {
            return Ok(mid);
        }
        if c > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(HarnessError::Generation(format!(
        "overlap target {target} not reached within 50 window attempts"
    )))
}

/// Salts a view's streams with its window, so identical windows get
/// identical clutter, jitter, and ordering — two views of the same
/// window are then bit-identical.
fn view_tag(tag: u64, lo: f64, hi: f64) -> u64 {
    tag ^ lo.to_bits().rotate_left(17) ^ hi.to_bits().rotate_left(43)
}

struct View {
    cloud: PointCloud,
    /// For each slot: the scene index of a surface point, or None for
    /// clutter.
    provenance: Vec<Option<usize>>,
}

fn build_view(scene: &Scene, spec: &SceneSpec, lo: f64, hi: f64) -> Result<View> {
    let indices = window_indices(scene, lo, hi);
    if indices.len() < 3 {
        return Err(HarnessError::Generation(format!(
            "window [{lo:.2}, {hi:.2}] holds only {} points",
            indices.len()
        )));
    }
    let mut points: Vec<Point3<f64>> = indices.iter().map(|&i| scene.points[i]).collect();
    let mut normals: Vec<Vector3<f64>> = indices.iter().map(|&i| scene.normals[i]).collect();
    // Keys are the clean scene coordinates; geometry may get jittered
    // below, keys never do.
    let mut keys: Vec<Point3<f64>> = points.clone();
    let mut provenance: Vec<Option<usize>> = indices.iter().map(|&i| Some(i)).collect();

    // Off-surface clutter with random far-away keys: geometry inside the
    // view's bounds, keys nowhere near any surface key, so the oracle
    // descriptor cannot accidentally pair clutter across views.
    let clutter = clutter_count(indices.len(), spec.outlier_fraction);
    if clutter > 0 {
        let mut rng = stream(spec.seed, view_tag(TAG_VIEW_CLUTTER, lo, hi));
        let (min, max) = bounds(&points);
        for _ in 0..clutter {
            let p = Point3::new(
                rng.random_range(min.x - 0.2..max.x + 0.2),
                rng.random_range(min.y - 0.2..max.y + 0.2),
                rng.random_range(min.z - 0.2..max.z + 0.2),
            );
            points.push(p);
            normals.push(random_unit(&mut rng));
            keys.push(Point3::new(
                rng.random_range(-40.0..40.0),
                rng.random_range(-40.0..40.0),
                rng.random_range(-40.0..40.0),
            ));
            provenance.push(None);
        }
    }

    if spec.noise > 0.0 {
        let mut rng = stream(spec.seed, view_tag(TAG_VIEW_NOISE, lo, hi));
        let gauss = Normal::new(0.0, spec.noise)
            .map_err(|e| HarnessError::Generation(e.to_string()))?;
        for p in &mut points {
            p.x += gauss.sample(&mut rng);
            p.y += gauss.sample(&mut rng);
            p.z += gauss.sample(&mut rng);
        }
    }

    // Shuffle so slot order carries no correspondence signal.
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut rng = stream(spec.seed, view_tag(TAG_VIEW_SHUFFLE, lo, hi));
    order.shuffle(&mut rng);

    let mut feature_data = Vec::with_capacity(order.len() * 3);
    let mut shuffled_points = Vec::with_capacity(order.len());
    let mut shuffled_normals = Vec::with_capacity(order.len());
    let mut shuffled_provenance = Vec::with_capacity(order.len());
    for &slot in &order {
        shuffled_points.push(points[slot]);
        shuffled_normals.push(normals[slot]);
        feature_data.extend_from_slice(&[keys[slot].x, keys[slot].y, keys[slot].z]);
        shuffled_provenance.push(provenance[slot]);
    }

    let cloud = PointCloud::new(shuffled_points)
        .and_then(|c| c.with_normals(shuffled_normals))
        .and_then(|c| c.with_features(FeatureSet::new(3, feature_data)?))
        .map_err(|e| HarnessError::Generation(e.to_string()))?;
    Ok(View { cloud, provenance: shuffled_provenance })
}

fn bounds(points: &[Point3<f64>]) -> (Point3<f64>, Point3<f64>) {
    let mut min = points[0];
    let mut max = points[0];
    for p in points {
        for k in 0..3 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    (min, max)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

// ---------------------------------------------------------------------
// Pair generation
// ---------------------------------------------------------------------

/// Generates one benchmark pair from its spec; deterministic per seed.
pub fn generate_pair(spec: &SceneSpec) -> Result<SyntheticPair> {
    spec.validate()?;
    let scene = sample_scene(spec.kind, spec.seed);

    // Window width leaves 12% slack so the far end of the shift range
    // always undershoots the overlap target and bisection can close in.
    let w = 0.88 * scene.length / (2.0 - spec.overlap);
    let delta = solve_window_shift(&scene, w, spec)?;

    let src = build_view(&scene, spec, 0.0, w)?;
    let tgt = build_view(&scene, spec, delta, delta + w)?;

    // Ground-truth motion of the requested magnitude.
    let mut rng = stream(spec.seed, TAG_MOTION);
    let axis = random_unit(&mut rng);
    let angle = rng.random_range(0.0..=1.0) * spec.max_rotation_deg.to_radians();
    let direction = random_unit(&mut rng);
    let shift = direction * (rng.random_range(0.0..=1.0) * spec.max_translation);
    let gt = RigidTransform::from_axis_angle(&axis, angle, shift);

    let tgt_cloud = gt.transform_cloud(&tgt.cloud);

    // Surface points present in both views, by scene index.
    let mut tgt_slot_of = std::collections::HashMap::new();
    for (slot, p) in tgt.provenance.iter().enumerate() {
        if let Some(scene_idx) = p {
            tgt_slot_of.insert(*scene_idx, slot);
        }
    }
    let mut pairs = Vec::new();
    for (slot, p) in src.provenance.iter().enumerate() {
        if let Some(scene_idx) = p {
            if let Some(&t) = tgt_slot_of.get(scene_idx) {
                pairs.push((slot, t));
            }
        }
    }
    pairs.sort_unstable();
    let weights = vec![1.0; pairs.len()];
    let gt_corr = Correspondences::new(pairs, weights, src.cloud.len(), tgt_cloud.len())
        .map_err(|e| HarnessError::Generation(e.to_string()))?;

    Ok(SyntheticPair { src: src.cloud, tgt: tgt_cloud, gt, gt_corr })
}

/// Mutual-nearest coverage of a pair at [`OVERLAP_RADIUS`], with the
/// target brought back into the source frame by the ground truth.
pub fn measured_overlap(src: &PointCloud, tgt: &PointCloud, gt: &RigidTransform) -> Result<f64> {
    let back = gt.inverse().transform_cloud(tgt);
    let index_src = SpatialIndex::new(src.points(), OVERLAP_RADIUS * 2.0)
        .map_err(HarnessError::from)?;
    let index_back = SpatialIndex::new(back.points(), OVERLAP_RADIUS * 2.0)
        .map_err(HarnessError::from)?;

    let nearest_in_back: Vec<Option<usize>> = src
        .points()
        .iter()
        .map(|p| index_back.k_nearest(p, 1).first().map(|&(_, j)| j))
        .collect();
    let mut mutual = 0usize;
    for (j, q) in back.points().iter().enumerate() {
        if let Some(&(_, i)) = index_src.k_nearest(q, 1).first() {
            if nearest_in_back[i] == Some(j)
                && (src.point(i) - back.point(j)).norm() <= OVERLAP_RADIUS
            {
                mutual += 1;
            }
        }
    }
    Ok(2.0 * mutual as f64 / (src.len() + back.len()) as f64)
}

// ---------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------

fn pair_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// High-overlap, lightly cluttered pairs that a single global stage
/// should finish.
pub fn easy_suite(pairs: usize, seed: u64) -> Vec<SceneSpec> {
    (0..pairs)
        .map(|i| SceneSpec {
            kind: SceneKind::ALL[i % 3],
            overlap: 0.80 + 0.03 * ((i % 5) as f64),
            noise: 0.002,
            outlier_fraction: 0.05,
            max_rotation_deg: 25.0,
            max_translation: 0.8,
            seed: pair_seed(seed, i),
        })
        .collect()
}

/// Low-overlap, heavily cluttered pairs that exercise the local
/// iterations.
pub fn low_overlap_suite(pairs: usize, seed: u64) -> Vec<SceneSpec> {
    (0..pairs)
        .map(|i| SceneSpec {
            kind: SceneKind::ALL[i % 3],
            overlap: 0.15 + 0.05 * ((i % 4) as f64),
            noise: 0.003,
            outlier_fraction: 0.5,
            max_rotation_deg: 40.0,
            max_translation: 1.2,
            seed: pair_seed(seed, i),
        })
        .collect()
}

/// Noise-free pairs for exact-recovery checks; feature corruption is
/// applied by the descriptor configuration, not the scene.
pub fn exact_suite(pairs: usize, seed: u64) -> Vec<SceneSpec> {
    (0..pairs)
        .map(|i| SceneSpec {
            kind: SceneKind::ALL[i % 3],
            overlap: 0.65 + 0.10 * ((i % 3) as f64),
            noise: 0.0,
            outlier_fraction: 0.0,
            max_rotation_deg: 30.0,
            max_translation: 1.0,
            seed: pair_seed(seed, i),
        })
        .collect()
}

// ---------------------------------------------------------------------
// Suite files
// ---------------------------------------------------------------------

const SUITE_HEADER: [&str; 7] = [
    "kind",
    "overlap",
    "noise",
    "outlier_fraction",
    "max_rotation_deg",
    "max_translation",
    "seed",
];

/// Serializes a suite as CSV.
pub fn format_suite(suite: &[SceneSpec]) -> String {
    let mut out = String::new();
    out.push_str(&SUITE_HEADER.join(","));
    out.push('\n');
    for s in suite {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.kind, s.overlap, s.noise, s.outlier_fraction, s.max_rotation_deg, s.max_translation,
            s.seed
        ));
    }
    out
}

/// Writes a suite CSV file.
pub fn save_suite(path: &Path, suite: &[SceneSpec]) -> Result<()> {
    std::fs::write(path, format_suite(suite)).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a suite CSV file written by [`save_suite`].
pub fn load_suite(path: &Path) -> Result<Vec<SceneSpec>> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let err = |line: usize, message: String| HarnessError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == SUITE_HEADER.join(",") => {}
        Some((_, header)) => {
            return Err(err(1, format!("unexpected suite header {header:?}")));
        }
        None => return Err(err(1, "empty suite file".into())),
    }
    let mut suite = Vec::new();
    for (i, row) in lines {
        let line = i + 1;
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != SUITE_HEADER.len() {
            return Err(err(
                line,
                format!("expected {} fields, found {}", SUITE_HEADER.len(), fields.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    err(line, format!("cannot parse {} from {:?}", SUITE_HEADER[k], fields[k]))
                })
        };
        let spec = SceneSpec {
            kind: fields[0].parse()?,
            overlap: num(1)?,
            noise: num(2)?,
            outlier_fraction: num(3)?,
            max_rotation_deg: num(4)?,
            max_translation: num(5)?,
            seed: fields[6]
                .parse::<u64>()
                .map_err(|_| err(line, format!("cannot parse seed from {:?}", fields[6])))?,
        };
        spec.validate()?;
        suite.push(spec);
    }
    if suite.is_empty() {
        return Err(err(1, "suite file declares no pairs".into()));
    }
    Ok(suite)
}
