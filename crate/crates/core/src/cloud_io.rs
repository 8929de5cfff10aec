//! Point cloud and trajectory ingestion.
//!
//! Scans use the KITTI velodyne layout: consecutive little-endian `f32`
//! quadruples `(x, y, z, intensity)`. Intensity is discarded. Pose files hold
//! one row-major 3×4 `[R|t]` matrix per line.
//!
//! Coordinates follow the usual lidar convention of x forward, y left, z up.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Maximum tolerated deviation of `RᵀR` from identity (and of `det R` from 1).
pub const ROTATION_TOLERANCE: f64 = 1e-6;

const KITTI_RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    /// Frame identifier, typically `<sequence>/<frame>`.
    pub source_id: String,
    /// Number of input records dropped because a coordinate was not finite.
    pub dropped: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            source_id: String::new(),
            dropped: 0,
        }
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A rigid body pose `p ↦ R·p + t` attached to a trajectory frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub frame_index: usize,
    pub timestamp: Option<f64>,
}

impl Pose {
    /// Builds a pose, checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, frame_index: usize) -> Result<Self> {
        validate_rotation(&rotation).map_err(|message| Error::InvalidPose {
            frame_index,
            message,
        })?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose {
                frame_index,
                message: "translation is not finite".into(),
            });
        }
        Ok(Self {
            rotation,
            translation,
            frame_index,
            timestamp: None,
        })
    }

    pub fn identity(frame_index: usize) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            frame_index,
            timestamp: None,
        }
    }

    pub fn from_translation(translation: Vector3<f64>, frame_index: usize) -> Self {
        Self {
            translation,
            ..Self::identity(frame_index)
        }
    }

    /// Rotation by `yaw` radians about +z followed by `translation`.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>, frame_index: usize) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self {
            rotation,
            translation,
            frame_index,
            timestamp: None,
        }
    }

    pub fn with_timestamp(mut self, t: f64) -> Self {
        self.timestamp = Some(t);
        self
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
            frame_index: self.frame_index,
            timestamp: self.timestamp,
        }
    }

    /// The 12 row-major entries of `[R|t]`.
    #[rustfmt::skip]
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
        ]
    }

    pub fn from_row_major(m: &[f64; 12], frame_index: usize) -> Result<Self> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        Pose::new(rotation, translation, frame_index)
    }
}

fn validate_rotation(r: &Matrix3<f64>) -> Result<(), String> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err("rotation is not finite".into());
    }
    let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
    if dev > ROTATION_TOLERANCE {
        return Err(format!("rotation is not orthonormal (|RᵀR − I|max = {dev:.3e})"));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(format!("rotation determinant is {det}, expected +1"));
    }
    Ok(())
}

/// Decodes KITTI velodyne bytes. Records with a non-finite coordinate are
/// dropped and counted in [`PointCloud::dropped`].
pub fn decode_kitti_scan(bytes: &[u8]) -> Option<PointCloud> {
    if bytes.len() % KITTI_RECORD_BYTES != 0 {
        return None;
    }
    let mut points = Vec::with_capacity(bytes.len() / KITTI_RECORD_BYTES);
    let mut dropped = 0;
    for rec in bytes.chunks_exact(KITTI_RECORD_BYTES) {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap());
        let (x, y, z) = (f(0), f(1), f(2));
        if x.is_finite() && y.is_finite() && z.is_finite() {
            points.push(Point3::new(x as f64, y as f64, z as f64));
        } else {
            dropped += 1;
        }
    }
    Some(PointCloud {
        points,
        source_id: String::new(),
        dropped,
    })
}

pub fn load_kitti_scan(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cloud = decode_kitti_scan(&bytes).ok_or_else(|| Error::MalformedScan {
        path: path.to_path_buf(),
        len: bytes.len() as u64,
    })?;
    cloud.source_id = scan_source_id(path);
    Ok(cloud)
}

/// Encodes a cloud in the KITTI layout with zero intensity.
pub fn encode_kitti_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * KITTI_RECORD_BYTES);
    for p in &cloud.points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_kitti_scan(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_kitti_scan(cloud)).map_err(|e| Error::io(path, e))
}

fn scan_source_id(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    match path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy())
    {
        Some(parent) if !parent.is_empty() => format!("{parent}/{stem}"),
        _ => stem.into_owned(),
    }
}

/// Parses a KITTI pose file body. Blank lines are skipped; the i-th pose
/// gets `frame_index = i`.
pub fn parse_kitti_poses(text: &str) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 12 {
            return Err(Error::PoseParse {
                line: lineno + 1,
                message: format!("expected 12 numbers, found {}", tokens.len()),
            });
        }
        let mut m = [0.0; 12];
        for (slot, tok) in m.iter_mut().zip(&tokens) {
            *slot = tok.parse().map_err(|_| Error::PoseParse {
                line: lineno + 1,
                message: format!("not a number: {tok:?}"),
            })?;
        }
        poses.push(Pose::from_row_major(&m, poses.len())?);
    }
    Ok(poses)
}

pub fn load_kitti_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_poses(&text)
}

pub fn write_kitti_poses(path: impl AsRef<Path>, poses: &[Pose]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in poses {
        let row: Vec<String> = p.to_row_major().iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn transform_cloud(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| pose.transform_point(p)).collect(),
        source_id: cloud.source_id.clone(),
        dropped: cloud.dropped,
    }
}
