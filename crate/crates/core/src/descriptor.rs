//! Polar-range-height partition and the NDT-MC descriptor matrix.
//!
//! Every NDT cell is assigned, by its mean, to a ring `r`, sector `θ` and
//! height layer `w`. Per bin the majority shape class and the summed entropy
//! are kept; layers are then collapsed with weight `w + 1`:
//!
//! ```text
//! G[r][θ] = Σ_w (w + 1) · S[r][θ][w]
//! E[r][θ] = Σ_w (w + 1) · E[r][θ][w]
//! ```
//!
//! The descriptor stacks `G` (rows `0..N_r`) on `E` (rows `N_r..2·N_r`), one
//! column per sector.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cloud_io::{Point3, PointCloud};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::ndt::{build_grid, NdtGrid, ShapeParams};

const DESCRIPTOR_MAGIC: &[u8; 4] = b"NDMC";
pub const DESCRIPTOR_FORMAT_VERSION: u16 = 1;

/// Geometry of the polar-range-height partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionParams {
    /// `N_r`
    pub rings: usize,
    /// `N_θ`
    pub sectors: usize,
    /// `N_w`
    pub layers: usize,
    /// `R` (m)
    pub max_range: f64,
    /// `Z` (m); heights are truncated to `[0, Z]` after adding `z_offset`.
    pub max_height: f64,
    /// Added to raw z before layering (m).
    pub z_offset: f64,
    /// Z-normalize the geometric and entropy blocks independently.
    #[serde(default)]
    pub block_normalization: bool,
}

impl Default for PartitionParams {
    fn default() -> Self {
        Self::kitti()
    }
}

impl PartitionParams {
    /// On-road profile: 20 rings × 60 sectors × 6 one-metre layers out to 80 m.
    pub fn kitti() -> Self {
        Self {
            rings: 20,
            sectors: 60,
            layers: 6,
            max_range: 80.0,
            max_height: 6.0,
            z_offset: 2.0,
            block_normalization: false,
        }
    }

    /// Parking-garage profile: 40 rings × 60 sectors × 3 one-metre layers.
    pub fn parking() -> Self {
        Self {
            rings: 40,
            sectors: 60,
            layers: 3,
            max_range: 80.0,
            max_height: 3.0,
            z_offset: 0.0,
            block_normalization: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rings == 0 || self.sectors == 0 || self.layers == 0 {
            return Err(Error::InvalidParams("ring, sector and layer counts must be >= 1".into()));
        }
        if self.rings > u16::MAX as usize || self.sectors > u16::MAX as usize {
            return Err(Error::InvalidParams("ring and sector counts must fit in u16".into()));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(Error::InvalidParams(format!("max_range must be > 0, got {}", self.max_range)));
        }
        if !(self.max_height > 0.0 && self.max_height.is_finite()) {
            return Err(Error::InvalidParams(format!("max_height must be > 0, got {}", self.max_height)));
        }
        if !self.z_offset.is_finite() {
            return Err(Error::InvalidParams("z_offset must be finite".into()));
        }
        Ok(())
    }

    /// `L_r = R / N_r`
    pub fn ring_width(&self) -> f64 {
        self.max_range / self.rings as f64
    }

    /// `L_θ = 2π / N_θ`
    pub fn sector_width(&self) -> f64 {
        TAU / self.sectors as f64
    }

    /// `L_z = Z / N_w`
    pub fn layer_height(&self) -> f64 {
        self.max_height / self.layers as f64
    }

    fn bin_count(&self) -> usize {
        self.rings * self.sectors * self.layers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinIndex {
    pub ring: usize,
    pub sector: usize,
    pub layer: usize,
}

/// Azimuth of `(x, y)` in `[0, 2π)`.
pub fn azimuth(x: f64, y: f64) -> f64 {
    let a = y.atan2(x);
    if a < 0.0 {
        a + TAU
    } else {
        a
    }
}

/// Bin of a point, or `None` if it lies outside the partition (beyond `R`,
/// on the sensor axis, or outside `[0, Z]` after the height offset). Points
/// exactly on the outer boundary of an axis land in its last bin.
pub fn partition_index(p: &Point3, params: &PartitionParams) -> Option<BinIndex> {
    let rho = p.x.hypot(p.y);
    let z = p.z + params.z_offset;
    if !(rho > 0.0 && rho <= params.max_range) || !(0.0..=params.max_height).contains(&z) {
        return None;
    }
    let clamp = |v: f64, n: usize| (v.floor() as usize).min(n - 1);
    Some(BinIndex {
        ring: clamp(rho / params.ring_width(), params.rings),
        sector: clamp(azimuth(p.x, p.y) / params.sector_width(), params.sectors),
        layer: clamp(z / params.layer_height(), params.layers),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Bin {
    /// Majority shape class, 0 when empty.
    pub shape_class: u16,
    /// Sum of cell entropies.
    pub entropy: f64,
    pub cells: u32,
}

/// Per-bin aggregates laid out `[ring][sector][layer]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinGrid {
    pub rings: usize,
    pub sectors: usize,
    pub layers: usize,
    bins: Vec<Bin>,
}

impl BinGrid {
    pub fn empty(params: &PartitionParams) -> Self {
        Self {
            rings: params.rings,
            sectors: params.sectors,
            layers: params.layers,
            bins: vec![Bin::default(); params.bin_count()],
        }
    }

    fn offset(&self, ring: usize, sector: usize, layer: usize) -> usize {
        (ring * self.sectors + sector) * self.layers + layer
    }

    pub fn get(&self, ring: usize, sector: usize, layer: usize) -> &Bin {
        &self.bins[self.offset(ring, sector, layer)]
    }

    pub fn get_mut(&mut self, ring: usize, sector: usize, layer: usize) -> &mut Bin {
        let i = self.offset(ring, sector, layer);
        &mut self.bins[i]
    }

    pub fn occupied(&self) -> usize {
        self.bins.iter().filter(|b| b.cells > 0).count()
    }
}

/// Majority shape class with ties going to the smaller class. `classes`
/// must be sorted ascending.
fn majority(classes: impl Iterator<Item = u16>) -> u16 {
    let (mut best, mut best_n) = (0u16, 0usize);
    let (mut cur, mut cur_n) = (0u16, 0usize);
    for s in classes {
        if s == cur {
            cur_n += 1;
        } else {
            cur = s;
            cur_n = 1;
        }
        // Strict comparison keeps the earlier (smaller) class on ties.
        if cur_n > best_n {
            best = cur;
            best_n = cur_n;
        }
    }
    best
}

/// Bins every cell by its mean: majority shape class and summed entropy.
pub fn aggregate_bins(grid: &NdtGrid, params: &PartitionParams) -> BinGrid {
    let mut out = BinGrid::empty(params);
    let mut binned: Vec<(usize, u16, f64)> = grid
        .cells
        .iter()
        .filter_map(|c| {
            partition_index(&c.mean, params).map(|b| (out.offset(b.ring, b.sector, b.layer), c.shape_class, c.entropy))
        })
        .collect();
    // Fully ordered so per-bin sums do not depend on cell order.
    binned.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    for group in binned.chunk_by(|a, b| a.0 == b.0) {
        let bin = &mut out.bins[group[0].0];
        bin.shape_class = majority(group.iter().map(|g| g.1));
        bin.entropy = group.iter().map(|g| g.2).sum();
        bin.cells = group.len() as u32;
    }
    out
}

/// The `(2·N_r) × N_θ` NDT-MC matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub rings: usize,
    pub sectors: usize,
    pub frame_id: u64,
    data: Vec<f64>,
}

impl Descriptor {
    pub fn zeros(rings: usize, sectors: usize) -> Self {
        Self {
            rings,
            sectors,
            frame_id: 0,
            data: vec![0.0; 2 * rings * sectors],
        }
    }

    /// Builds a descriptor from row-major data of length `2·rings·sectors`.
    pub fn from_row_major(rings: usize, sectors: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * rings * sectors {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for a ({}×{}) descriptor, got {}",
                2 * rings * sectors,
                2 * rings,
                sectors,
                data.len()
            )));
        }
        Ok(Self {
            rings,
            sectors,
            frame_id: 0,
            data,
        })
    }

    pub fn with_frame_id(mut self, id: u64) -> Self {
        self.frame_id = id;
        self
    }

    pub fn rows(&self) -> usize {
        2 * self.rings
    }

    pub fn cols(&self) -> usize {
        self.sectors
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.sectors + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.sectors + col] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows()).map(move |r| self.get(r, col))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Columns rotated left by `k`: column `i` of the result is column
    /// `(i + k) mod N_θ` of `self`.
    pub fn shifted(&self, k: usize) -> Descriptor {
        let n = self.sectors;
        let mut out = self.clone();
        for r in 0..self.rows() {
            for i in 0..n {
                out.set(r, i, self.get(r, (i + k) % n));
            }
        }
        out
    }

    pub fn same_shape(&self, other: &Descriptor) -> bool {
        self.rings == other.rings && self.sectors == other.sectors
    }

    /// Debug dump: one matrix row per line, six significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows() {
            let row: Vec<String> = (0..self.cols()).map(|c| fmt_sig6(self.get(r, c))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn fmt_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Height-weighted encoding of the bin grid.
pub fn encode(bins: &BinGrid, params: &PartitionParams) -> Descriptor {
    let mut d = Descriptor::zeros(bins.rings, bins.sectors);
    for r in 0..bins.rings {
        for t in 0..bins.sectors {
            let (mut g, mut e) = (0.0, 0.0);
            for w in 0..bins.layers {
                let bin = bins.get(r, t, w);
                let weight = (w + 1) as f64;
                g += weight * bin.shape_class as f64;
                e += weight * bin.entropy;
            }
            d.set(r, t, g);
            d.set(bins.rings + r, t, e);
        }
    }
    if params.block_normalization {
        normalize_blocks(&mut d);
    }
    d
}

fn normalize_blocks(d: &mut Descriptor) {
    let half = d.rings * d.sectors;
    for block in d.data.chunks_mut(half) {
        let n = block.len() as f64;
        let mean = block.iter().sum::<f64>() / n;
        let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for v in block.iter_mut() {
            *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
        }
    }
}

/// Normalized histogram of shape classes (class `S` at index `S - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricKey {
    pub histogram: Vec<f64>,
    pub total_cells: usize,
}

impl GeometricKey {
    pub fn from_classes(classes: impl IntoIterator<Item = u16>, class_count: usize) -> Self {
        let mut counts = vec![0usize; class_count];
        let mut total = 0;
        for s in classes {
            if s >= 1 && (s as usize) <= class_count {
                counts[s as usize - 1] += 1;
                total += 1;
            }
        }
        let histogram = counts
            .iter()
            .map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 })
            .collect();
        Self {
            histogram,
            total_cells: total,
        }
    }

    pub fn len(&self) -> usize {
        self.histogram.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histogram.is_empty()
    }
}

/// Shape-class histogram of the cells that fall inside the partition.
pub fn geometric_key(grid: &NdtGrid, params: &PartitionParams, class_count: usize) -> GeometricKey {
    GeometricKey::from_classes(
        grid.cells
            .iter()
            .filter(|c| partition_index(&c.mean, params).is_some())
            .map(|c| c.shape_class),
        class_count,
    )
}

/// Column means of a descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorKey {
    pub values: Vec<f64>,
}

impl SectorKey {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn sector_key(d: &Descriptor) -> SectorKey {
    let rows = d.rows() as f64;
    SectorKey {
        values: (0..d.cols()).map(|c| d.column(c).sum::<f64>() / rows).collect(),
    }
}

/// A descriptor with both of its retrieval keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub descriptor: Descriptor,
    pub geometric_key: GeometricKey,
    pub sector_key: SectorKey,
}

impl Signature {
    pub fn frame_id(&self) -> u64 {
        self.descriptor.frame_id
    }

    pub fn with_frame_id(mut self, id: u64) -> Self {
        self.descriptor.frame_id = id;
        self
    }

    pub fn encoded_len(&self) -> usize {
        4 + 2 + 3 * 2 + 8 + 8 + 8 * (self.descriptor.as_slice().len() + self.geometric_key.len() + self.sector_key.len())
    }

    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<W> {
        let mut w = Writer::new(w);
        self.write_record(&mut w)?;
        Ok(w.into_inner())
    }

    pub(crate) fn write_record<W: Write>(&self, w: &mut Writer<W>) -> std::io::Result<()> {
        let d = &self.descriptor;
        w.bytes(DESCRIPTOR_MAGIC)?;
        w.u16(DESCRIPTOR_FORMAT_VERSION)?;
        w.u16(d.rings as u16)?;
        w.u16(d.sectors as u16)?;
        w.u16(self.geometric_key.len() as u16)?;
        w.u64(d.frame_id)?;
        w.u64(self.geometric_key.total_cells as u64)?;
        for v in d.as_slice() {
            w.f64(*v)?;
        }
        for v in &self.geometric_key.histogram {
            w.f64(*v)?;
        }
        for v in &self.sector_key.values {
            w.f64(*v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        Self::read_record(&mut Reader::new(r))
    }

    pub(crate) fn read_record<R: Read>(r: &mut Reader<R>) -> Result<Self> {
        r.magic(DESCRIPTOR_MAGIC)?;
        r.version(DESCRIPTOR_FORMAT_VERSION)?;
        let rings = r.u16()? as usize;
        let sectors = r.u16()? as usize;
        let classes = r.u16()? as usize;
        if rings == 0 || sectors == 0 {
            return Err(Error::Corrupt("descriptor with zero rings or sectors".into()));
        }
        let frame_id = r.u64()?;
        let total_cells = r.u64()? as usize;
        let data = (0..2 * rings * sectors).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let histogram = (0..classes).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let values = (0..sectors).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            descriptor: Descriptor::from_row_major(rings, sectors, data)?.with_frame_id(frame_id),
            geometric_key: GeometricKey {
                histogram,
                total_cells,
            },
            sector_key: SectorKey { values },
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.write_to(Vec::with_capacity(self.encoded_len())).expect("writing to a Vec cannot fail")
    }
}

/// Grid → bins → descriptor → keys.
pub fn extract(grid: &NdtGrid, params: &PartitionParams, shape: &ShapeParams) -> Signature {
    let bins = aggregate_bins(grid, params);
    let descriptor = encode(&bins, params);
    let sector_key = sector_key(&descriptor);
    Signature {
        geometric_key: geometric_key(grid, params, shape.class_count()),
        descriptor,
        sector_key,
    }
}

/// Builds the NDT grid at `resolution` and extracts from it.
pub fn extract_from_cloud(
    cloud: &PointCloud,
    resolution: f64,
    params: &PartitionParams,
    shape: &ShapeParams,
) -> Result<Signature> {
    params.validate()?;
    let grid = build_grid(cloud, resolution, shape)?;
    Ok(extract(&grid, params, shape))
}
