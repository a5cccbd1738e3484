//! Point cloud and pose file I/O.
//!
//! Three cloud formats are supported:
//!
//! - **xyz** — one `x y z` triple per line, whitespace separated.
//! - **xyzn** — one `x y z nx ny nz` line per point; normals are
//!   renormalized on load.
//! - **ply** (ASCII only) — a standard `ply` header followed by one data
//!   row per vertex. `x`, `y`, `z` properties are required; when `nx`,
//!   `ny`, `nz` are declared the normals are loaded and renormalized.
//!   Unknown scalar vertex properties are skipped column-wise.
//!
//! Every loader rejects non-finite coordinates, reports malformed rows
//! with their line number, and reports files that end before their
//! declared content with the byte offset where data ran out.
//!
//! Pose files are 4 lines of 4 whitespace-separated reals: the row-major
//! homogeneous matrix of a rigid motion.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix4, Point3, Vector3};
use scanreg::cloud::FeatureSet;
use scanreg::{PointCloud, RigidTransform};

use crate::{HarnessError, Result};

/// Supported cloud file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// ASCII PLY with at least `x y z` vertex properties.
    PlyAscii,
    /// Plain `x y z` rows.
    Xyz,
    /// `x y z nx ny nz` rows.
    Xyzn,
}

impl CloudFormat {
    /// Picks the format from a file extension (`ply`, `xyz`, `xyzn`).
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ply") => Ok(CloudFormat::PlyAscii),
            Some("xyz") => Ok(CloudFormat::Xyz),
            Some("xyzn") => Ok(CloudFormat::Xyzn),
            other => Err(HarnessError::Config(format!(
                "cannot infer cloud format from extension {:?} of {}; expected ply, xyz, or xyzn",
                other.unwrap_or(""),
                path.display()
            ))),
        }
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn finite(path: &Path, line: usize, field: &str, text: &str) -> Result<f64> {
    let value: f64 = text
        .parse()
        .map_err(|_| parse_error(path, line, format!("cannot parse {field} from {text:?}")))?;
    if !value.is_finite() {
        return Err(parse_error(
            path,
            line,
            format!("{field} is {text}; coordinates must be finite"),
        ));
    }
    Ok(value)
}

/// Lines of a file with their 1-based numbers and starting byte offsets.
struct Lines<'a> {
    text: &'a str,
}

impl<'a> Lines<'a> {
    fn iter(&self) -> impl Iterator<Item = (usize, u64, &'a str)> {
        let text = self.text;
        let mut offset = 0u64;
        text.split_inclusive('\n').enumerate().map(move |(i, raw)| {
            let start = offset;
            offset += raw.len() as u64;
            (i + 1, start, raw.trim_end_matches(['\n', '\r']))
        })
    }
}

fn normalized(path: &Path, line: usize, n: Vector3<f64>) -> Result<Vector3<f64>> {
    let len = n.norm();
    if len <= 1e-12 {
        return Err(parse_error(path, line, "normal has zero length"));
    }
    Ok(n / len)
}

/// Loads a cloud file; see the module docs for the formats.
pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = read_to_string(path)?;
    match format {
        CloudFormat::Xyz => load_rows(path, &text, 3),
        CloudFormat::Xyzn => load_rows(path, &text, 6),
        CloudFormat::PlyAscii => load_ply(path, &text),
    }
}

/// Loads a cloud, picking the format from the file extension.
pub fn load_cloud_auto(path: &Path) -> Result<PointCloud> {
    load_cloud(path, CloudFormat::from_path(path)?)
}

fn load_rows(path: &Path, text: &str, width: usize) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (line, _, content) in (Lines { text }).iter() {
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != width {
            return Err(parse_error(
                path,
                line,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let v: Vec<f64> = fields
            .iter()
            .enumerate()
            .map(|(k, f)| finite(path, line, FIELD_NAMES[k], f))
            .collect::<Result<_>>()?;
        points.push(Point3::new(v[0], v[1], v[2]));
        if width == 6 {
            normals.push(normalized(path, line, Vector3::new(v[3], v[4], v[5]))?);
        }
    }
    build_cloud(path, points, if normals.is_empty() { None } else { Some(normals) })
}

const FIELD_NAMES: [&str; 6] = ["x", "y", "z", "nx", "ny", "nz"];

fn build_cloud(
    path: &Path,
    points: Vec<Point3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
) -> Result<PointCloud> {
    let cloud = PointCloud::new(points)
        .map_err(|e| parse_error(path, 0, e.to_string()))?;
    match normals {
        Some(n) => cloud
            .with_normals(n)
            .map_err(|e| parse_error(path, 0, e.to_string())),
        None => Ok(cloud),
    }
}

fn load_ply(path: &Path, text: &str) -> Result<PointCloud> {
    let mut lines = (Lines { text }).iter();

    let mut header_done = false;
    let mut vertex_count: Option<usize> = None;
    // Property names of the vertex element, in declaration order.
    let mut columns: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    let mut magic_seen = false;
    let mut format_seen = false;
    let mut last_line = 0usize;

    for (line, _, content) in lines.by_ref() {
        last_line = line;
        let content = content.trim();
        if !magic_seen {
            if content != "ply" {
                return Err(parse_error(path, line, "not a ply file: missing `ply` magic"));
            }
            magic_seen = true;
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        match fields.first().copied() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                if fields.get(1) != Some(&"ascii") {
                    return Err(parse_error(
                        path,
                        line,
                        format!("unsupported ply format {:?}; only ascii is handled", fields.get(1).copied().unwrap_or("")),
                    ));
                }
                format_seen = true;
            }
            Some("element") => match fields.get(1).copied() {
                Some("vertex") => {
                    let count = fields
                        .get(2)
                        .and_then(|c| c.parse::<usize>().ok())
                        .ok_or_else(|| parse_error(path, line, "element vertex needs a count"))?;
                    vertex_count = Some(count);
                    in_vertex_element = true;
                }
                Some(other) => {
                    let count = fields.get(2).and_then(|c| c.parse::<usize>().ok());
                    if count != Some(0) {
                        return Err(parse_error(
                            path,
                            line,
                            format!("unsupported ply element {other:?} with data rows"),
                        ));
                    }
                    in_vertex_element = false;
                }
                None => return Err(parse_error(path, line, "element needs a name")),
            },
            Some("property") => {
                if in_vertex_element {
                    if fields.get(1) == Some(&"list") {
                        return Err(parse_error(path, line, "list properties are not supported on vertices"));
                    }
                    let name = fields
                        .get(2)
                        .ok_or_else(|| parse_error(path, line, "property needs a type and a name"))?;
                    columns.push((*name).to_string());
                }
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some(other) => {
                return Err(parse_error(path, line, format!("unknown header keyword {other:?}")));
            }
        }
    }

    if !header_done {
        return Err(parse_error(
            path,
            last_line,
            "header never closed with end_header",
        ));
    }
    if !format_seen {
        return Err(parse_error(path, last_line, "header is missing the format line"));
    }
    let vertex_count =
        vertex_count.ok_or_else(|| parse_error(path, last_line, "header declares no vertex element"))?;

    let col = |name: &str| columns.iter().position(|c| c == name);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            return Err(parse_error(
                path,
                last_line,
                "vertex element must declare x, y and z properties",
            ))
        }
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        (None, None, None) => None,
        _ => {
            return Err(parse_error(
                path,
                last_line,
                "vertex normals need all three of nx, ny, nz",
            ))
        }
    };

    let mut points = Vec::with_capacity(vertex_count);
    let mut normals = normal_cols.map(|_| Vec::with_capacity(vertex_count));
    for (line, _, content) in lines {
        if points.len() == vertex_count {
            break;
        }
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != columns.len() {
            return Err(parse_error(
                path,
                line,
                format!(
                    "expected {} fields per vertex row, found {}",
                    columns.len(),
                    fields.len()
                ),
            ));
        }
        let get = |i: usize, name: &str| finite(path, line, name, fields[i]);
        points.push(Point3::new(get(xi, "x")?, get(yi, "y")?, get(zi, "z")?));
        if let (Some((a, b, c)), Some(ns)) = (normal_cols, normals.as_mut()) {
            ns.push(normalized(
                path,
                line,
                Vector3::new(get(a, "nx")?, get(b, "ny")?, get(c, "nz")?),
            )?);
        }
    }

    if points.len() < vertex_count {
        return Err(HarnessError::Truncated {
            path: path.to_path_buf(),
            offset: text.len() as u64,
        });
    }
    build_cloud(path, points, normals)
}

/// Serializes `cloud` in the given format.
///
/// `Xyzn` and normal-carrying `PlyAscii` output require the cloud to have
/// normals; `PlyAscii` writes them exactly when present. Floats use the
/// shortest representation that parses back to the identical value, so a
/// save/load round trip is exact.
pub fn format_cloud(cloud: &PointCloud, format: CloudFormat) -> Result<String> {
    let mut out = String::new();
    let normals = cloud.normals();
    match format {
        CloudFormat::Xyz => {
            for p in cloud.points() {
                let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
            }
        }
        CloudFormat::Xyzn => {
            let normals = normals.ok_or_else(|| {
                HarnessError::Config("xyzn output needs a cloud with normals".into())
            })?;
            for (p, n) in cloud.points().iter().zip(normals) {
                let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z);
            }
        }
        CloudFormat::PlyAscii => {
            out.push_str("ply\nformat ascii 1.0\n");
            let _ = writeln!(out, "element vertex {}", cloud.len());
            out.push_str("property double x\nproperty double y\nproperty double z\n");
            if normals.is_some() {
                out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
            }
            out.push_str("end_header\n");
            for (i, p) in cloud.points().iter().enumerate() {
                match normals {
                    Some(ns) => {
                        let n = ns[i];
                        let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z);
                    }
                    None => {
                        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Writes `cloud` to `path` in the given format; see [`format_cloud`].
pub fn save_cloud(path: &Path, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    let text = format_cloud(cloud, format)?;
    std::fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a rigid motion from a 4×4 row-major homogeneous matrix file.
pub fn load_pose(path: &Path) -> Result<RigidTransform> {
    let text = read_to_string(path)?;
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for (line, _, content) in (Lines { text: &text }).iter() {
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        if rows.len() == 4 {
            return Err(parse_error(path, line, "more than 4 matrix rows"));
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_error(
                path,
                line,
                format!("expected 4 fields per matrix row, found {}", fields.len()),
            ));
        }
        let mut row = [0.0; 4];
        for (k, f) in fields.iter().enumerate() {
            row[k] = finite(path, line, "matrix entry", f)?;
        }
        rows.push(row);
    }
    if rows.len() < 4 {
        return Err(HarnessError::Truncated {
            path: path.to_path_buf(),
            offset: text.len() as u64,
        });
    }
    let m = Matrix4::from_fn(|r, c| rows[r][c]);
    RigidTransform::from_homogeneous(&m)
        .map_err(|e| parse_error(path, 0, format!("not a rigid motion: {e}")))
}

/// Serializes a rigid motion as 4 rows of 4 whitespace-separated reals.
pub fn format_pose(pose: &RigidTransform) -> String {
    let m = pose.to_homogeneous();
    let mut out = String::new();
    for r in 0..4 {
        let _ = writeln!(out, "{} {} {} {}", m[(r, 0)], m[(r, 1)], m[(r, 2)], m[(r, 3)]);
    }
    out
}

/// Writes a rigid motion to `path`; see [`format_pose`].
pub fn save_pose(path: &Path, pose: &RigidTransform) -> Result<()> {
    std::fs::write(path, format_pose(pose)).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Attaches `width`-dimensional features to a cloud, row-major.
///
/// A convenience for tests and tools that plant oracle keys by hand.
pub fn with_planted_features(
    cloud: PointCloud,
    width: usize,
    data: Vec<f64>,
) -> Result<PointCloud> {
    let features = FeatureSet::new(width, data).map_err(HarnessError::from)?;
    cloud.with_features(features).map_err(HarnessError::from)
}
