//! Rolling NDT map along a posed trajectory, cut into place-sized submaps.
//!
//! Scans are merged into world-frame voxel accumulators. Each time the x-y
//! arc length since the previous place reaches `place_length`, the map is
//! finalized, re-expressed in the frame of the segment's middle pose,
//! cropped and emitted. Voxels survive place boundaries until they leave
//! `crop_radius` of the vehicle, so consecutive places overlap.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud_io::{transform_cloud, PointCloud, Pose};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::ndt::{NdtGrid, ShapeParams, VoxelAccumulators};

/// Slack for accumulated floating-point arc length.
const ARC_EPSILON: f64 = 1e-9;

const PLACES_MAGIC: &[u8; 4] = b"NDPL";
pub const PLACES_FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmapConfig {
    /// Trajectory length covered by one place (m).
    pub place_length: f64,
    /// Cells farther than this from the anchor in x-y are dropped (m).
    pub crop_radius: f64,
    /// Minimum time between emitted places (s). Only enforced when poses
    /// carry timestamps.
    pub update_period: f64,
}

impl Default for SubmapConfig {
    fn default() -> Self {
        Self {
            place_length: 4.0,
            crop_radius: 80.0,
            update_period: 1.0,
        }
    }
}

impl SubmapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.place_length > 0.0 && self.place_length.is_finite()) {
            return Err(Error::InvalidParams(format!("place_length must be > 0, got {}", self.place_length)));
        }
        if !(self.crop_radius > 0.0 && self.crop_radius.is_finite()) {
            return Err(Error::InvalidParams(format!("crop_radius must be > 0, got {}", self.crop_radius)));
        }
        if !(self.update_period >= 0.0 && self.update_period.is_finite()) {
            return Err(Error::InvalidParams(format!("update_period must be >= 0, got {}", self.update_period)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceRecord {
    pub place_id: u64,
    /// World pose of the segment frame closest to mid-arc.
    pub anchor: Pose,
    /// First and last member frame, inclusive.
    pub frames: (u64, u64),
    /// Cropped map in the anchor frame.
    pub grid: NdtGrid,
}

#[derive(Debug, Clone)]
struct SegmentFrame {
    arc: f64,
    pose: Pose,
}

/// Stateful accumulator for one trajectory.
#[derive(Debug, Clone)]
pub struct SubmapBuilder {
    config: SubmapConfig,
    shape: ShapeParams,
    map: VoxelAccumulators,
    segment: Vec<SegmentFrame>,
    last_emit_time: Option<f64>,
    next_place_id: u64,
}

impl SubmapBuilder {
    pub fn new(config: SubmapConfig, resolution: f64, shape: ShapeParams) -> Result<Self> {
        config.validate()?;
        shape.validate()?;
        Ok(Self {
            config,
            shape,
            map: VoxelAccumulators::new(resolution)?,
            segment: Vec::new(),
            last_emit_time: None,
            next_place_id: 0,
        })
    }

    /// Arc length of the current segment.
    pub fn arc_length(&self) -> f64 {
        self.segment.last().map_or(0.0, |f| f.arc)
    }

    /// Number of live voxels.
    pub fn voxel_count(&self) -> usize {
        self.map.voxels.len()
    }

    /// Merges a sensor-frame scan taken at `pose` (sensor to world).
    pub fn accumulate(&mut self, scan: &PointCloud, pose: &Pose) -> Result<()> {
        let arc = match self.segment.last() {
            Some(prev) => {
                if pose.frame_index <= prev.pose.frame_index {
                    return Err(Error::OutOfOrder {
                        previous: prev.pose.frame_index,
                        found: pose.frame_index,
                    });
                }
                let d = pose.translation - prev.pose.translation;
                prev.arc + d.x.hypot(d.y)
            }
            None => 0.0,
        };
        self.map.extend(&transform_cloud(scan, pose).points);
        self.segment.push(SegmentFrame { arc, pose: pose.clone() });
        Ok(())
    }

    /// The current map in world coordinates.
    pub fn world_grid(&self) -> Result<NdtGrid> {
        self.map.finalize(&self.shape)
    }

    /// Emits a place once the segment is long enough, then starts a new
    /// segment at the latest frame and prunes voxels out of range.
    pub fn emit_place(&mut self) -> Result<Option<PlaceRecord>> {
        let arc = self.arc_length();
        if arc + ARC_EPSILON < self.config.place_length {
            return Ok(None);
        }
        let last = self.segment.last().expect("non-empty segment").pose.clone();
        if let (Some(now), Some(prev)) = (last.timestamp, self.last_emit_time) {
            if now - prev < self.config.update_period {
                return Ok(None);
            }
        }

        let half = arc / 2.0;
        let anchor = self
            .segment
            .iter()
            .min_by(|a, b| (a.arc - half).abs().total_cmp(&(b.arc - half).abs()))
            .expect("non-empty segment")
            .pose
            .clone();
        let world = self.map.finalize(&self.shape)?;
        let local = world.transformed(&anchor.inverse());
        let r2 = self.config.crop_radius * self.config.crop_radius;
        let cells = local
            .cells
            .into_iter()
            .filter(|c| c.mean.x * c.mean.x + c.mean.y * c.mean.y <= r2)
            .collect();
        let place = PlaceRecord {
            place_id: self.next_place_id,
            anchor,
            frames: (
                self.segment[0].pose.frame_index as u64,
                last.frame_index as u64,
            ),
            grid: NdtGrid::from_cells(local.resolution, cells),
        };

        self.next_place_id += 1;
        self.last_emit_time = last.timestamp;
        let center = last.translation;
        self.map.voxels.retain(|_, acc| {
            let d = acc.mean - center;
            d.x * d.x + d.y * d.y <= r2
        });
        self.segment.clear();
        self.segment.push(SegmentFrame { arc: 0.0, pose: last });
        Ok(Some(place))
    }

    /// Accumulates then tries to emit.
    pub fn push(&mut self, scan: &PointCloud, pose: &Pose) -> Result<Option<PlaceRecord>> {
        self.accumulate(scan, pose)?;
        self.emit_place()
    }
}

/// Writes `{"NDPL", version u16, count u64}` followed by, per place,
/// `{place_id u64, anchor 12×f64, first frame u64, last frame u64}` and the
/// place's grid in NDT grid format.
pub fn write_places<W: Write>(w: W, places: &[PlaceRecord]) -> std::io::Result<W> {
    let mut w = Writer::new(w);
    w.bytes(PLACES_MAGIC)?;
    w.u16(PLACES_FORMAT_VERSION)?;
    w.u64(places.len() as u64)?;
    for p in places {
        w.u64(p.place_id)?;
        for v in p.anchor.to_row_major() {
            w.f64(v)?;
        }
        w.u64(p.frames.0)?;
        w.u64(p.frames.1)?;
        w.bytes(&p.grid.to_bytes())?;
    }
    Ok(w.into_inner())
}

pub fn read_places<R: Read>(mut r: R) -> Result<Vec<PlaceRecord>> {
    let mut header = Reader::new(&mut r);
    header.magic(PLACES_MAGIC)?;
    header.version(PLACES_FORMAT_VERSION)?;
    let count = header.u64()?;
    let mut places = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let mut rec = Reader::new(&mut r);
        let place_id = rec.u64()?;
        let mut m = [0.0; 12];
        for v in &mut m {
            *v = rec.f64()?;
        }
        let first = rec.u64()?;
        let last = rec.u64()?;
        if first > last {
            return Err(Error::Corrupt(format!("place {place_id} has frame range {first}..{last}")));
        }
        let anchor = Pose::from_row_major(&m, first as usize)
            .map_err(|e| Error::Corrupt(format!("place {place_id} anchor: {e}")))?;
        let grid = NdtGrid::read_from(&mut r)?;
        places.push(PlaceRecord {
            place_id,
            anchor,
            frames: (first, last),
            grid,
        });
    }
    Ok(places)
}

pub fn save_places(path: impl AsRef<Path>, places: &[PlaceRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_places(std::io::BufWriter::new(f), places)
        .and_then(|mut w| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_places(path: impl AsRef<Path>) -> Result<Vec<PlaceRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_places(std::io::BufReader::new(f))
}
