//! Voxelized NDT representation.
//!
//! Points are bucketed into cubic voxels of edge `resolution`. Each voxel keeps
//! a one-pass accumulator (running mean and scatter matrix) and, once
//! finalized, becomes an [`NdtCell`]: a Gaussian with its sorted covariance
//! eigenvalues, the shape index `g = e1·e3 / e2²`, the discrete shape class
//! `S = ⌈min(g, g_max) / s⌉` and the differential entropy of the Gaussian.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::cloud_io::{Point3, PointCloud, Pose};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

/// Cells whose middle eigenvalue is at or below this value (m²) are degenerate.
pub const EIGEN_EPSILON: f64 = 1e-9;

/// Eigenvalues below `-NEGATIVE_EIGEN_TOLERANCE` indicate a numerical failure.
pub const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-9;

const GRID_MAGIC: &[u8; 4] = b"NDTG";
pub const GRID_FORMAT_VERSION: u16 = 1;

/// Parameters of the shape classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeParams {
    /// Segment width `s` applied to the shape index.
    pub segment: f64,
    /// Shape indices above `g_max` are clamped into the top class.
    pub g_max: f64,
    /// Voxels with fewer points are omitted.
    pub min_points: usize,
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self {
            segment: 0.3,
            g_max: 2.4,
            min_points: 6,
        }
    }
}

impl ShapeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.segment > 0.0 && self.segment.is_finite()) {
            return Err(Error::InvalidParams(format!("segment must be > 0, got {}", self.segment)));
        }
        if !(self.g_max > 0.0 && self.g_max.is_finite()) {
            return Err(Error::InvalidParams(format!("g_max must be > 0, got {}", self.g_max)));
        }
        if self.min_points < 1 {
            return Err(Error::InvalidParams("min_points must be >= 1".into()));
        }
        if self.class_count() > u16::MAX as usize {
            return Err(Error::InvalidParams("too many shape classes".into()));
        }
        Ok(())
    }

    /// Number of shape classes `N_s = ⌈g_max / s⌉`.
    pub fn class_count(&self) -> usize {
        ceil_ratio(self.g_max, self.segment).max(1) as usize
    }

    /// Shape class of a shape index, in `1..=N_s`.
    pub fn shape_class(&self, g: f64) -> u16 {
        let clamped = g.min(self.g_max).max(0.0);
        let s = ceil_ratio(clamped, self.segment).max(1) as usize;
        s.min(self.class_count()) as u16
    }
}

/// `⌈a / b⌉`, ignoring round-off of a few ulps above an integer.
fn ceil_ratio(a: f64, b: f64) -> i64 {
    (a / b - 1e-9).ceil() as i64
}

/// Integer voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VoxelKey {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelKey {
    pub fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    /// Floor-division key of `p` (so `-0.1` maps to `-1` at any resolution).
    pub fn of(p: &Point3, resolution: f64) -> Self {
        Self {
            i: (p.x / resolution).floor() as i32,
            j: (p.y / resolution).floor() as i32,
            k: (p.z / resolution).floor() as i32,
        }
    }
}

/// One-pass mean and scatter accumulator for a single voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellAccumulator {
    pub count: u64,
    pub mean: Vector3<f64>,
    pub scatter: Matrix3<f64>,
}

impl Default for CellAccumulator {
    fn default() -> Self {
        Self {
            count: 0,
            mean: Vector3::zeros(),
            scatter: Matrix3::zeros(),
        }
    }
}

impl CellAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one point:
    /// `mean_i = mean_{i-1} + (p - mean_{i-1}) / i` and
    /// `C_i = C_{i-1} + (i-1)/i · d dᵀ` with `d = p - mean_{i-1}`.
    pub fn push(&mut self, p: &Point3) {
        self.count += 1;
        let n = self.count as f64;
        let d = p - self.mean;
        self.mean += d / n;
        let w = (n - 1.0) / n;
        // Only the upper triangle is computed; the lower one is mirrored so
        // the scatter stays exactly symmetric.
        for r in 0..3 {
            for c in r..3 {
                let v = self.scatter[(r, c)] + w * d[r] * d[c];
                self.scatter[(r, c)] = v;
                self.scatter[(c, r)] = v;
            }
        }
    }

    pub fn accumulate(mut self, p: &Point3) -> Self {
        self.push(p);
        self
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        if self.count == 0 {
            Matrix3::zeros()
        } else {
            self.scatter / self.count as f64
        }
    }
}

/// Coarse shape category of a shape index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeCategory {
    /// `0 < g ≤ 0.3`
    Plane,
    /// `0.3 < g ≤ 0.7`
    Ellipsoid,
    /// `0.7 < g ≤ 2`
    Sphere,
    /// `2 < g ≤ 8`
    Line,
    Other,
}

/// Maps a shape index onto its category. Diagnostic only: descriptors use
/// the shape class, not this category.
pub fn classify_shape_category(g: f64) -> ShapeCategory {
    match g {
        g if g > 0.0 && g <= 0.3 => ShapeCategory::Plane,
        g if g > 0.3 && g <= 0.7 => ShapeCategory::Ellipsoid,
        g if g > 0.7 && g <= 2.0 => ShapeCategory::Sphere,
        g if g > 2.0 && g <= 8.0 => ShapeCategory::Line,
        _ => ShapeCategory::Other,
    }
}

/// Eigenvalues of a symmetric 3×3 matrix in descending order.
///
/// Cyclic Jacobi rotations on the symmetrized input. Unlike closed-form
/// cubic solutions this stays accurate when two eigenvalues nearly coincide,
/// which is the common case for line- and plane-shaped cells.
pub fn symmetric_eigenvalues(m: &Matrix3<f64>) -> [f64; 3] {
    let mut a = [[0.0f64; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            a[r][c] = 0.5 * (m[(r, c)] + m[(c, r)]);
        }
    }
    for _sweep in 0..32 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let diag = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off == 0.0 || off <= f64::EPSILON * 1e-3 * diag {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            a[p][p] -= t * apq;
            a[q][q] += t * apq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            let r = 3 - p - q;
            let (arp, arq) = (a[r][p], a[r][q]);
            a[r][p] = c * arp - s * arq;
            a[p][r] = a[r][p];
            a[r][q] = s * arp + c * arq;
            a[q][r] = a[r][q];
        }
    }
    let mut e = [a[0][0], a[1][1], a[2][2]];
    e.sort_by(|x, y| y.total_cmp(x));
    e
}

/// Shape index `g = e1·e3 / e2²`; `None` when `e2 ≤ EIGEN_EPSILON`.
pub fn shape_index(eigenvalues: &[f64; 3]) -> Option<f64> {
    let [e1, e2, e3] = *eigenvalues;
    (e2 > EIGEN_EPSILON).then(|| e1 * e3 / (e2 * e2))
}

/// Differential entropy (nats) of a 3D Gaussian with the given covariance
/// eigenvalues: `3/2·(ln 2π + 1) + 1/2·ln|Σ|`.
///
/// Eigenvalues are floored at [`EIGEN_EPSILON`] so perfectly flat cells keep
/// a finite entropy.
pub fn gaussian_entropy(eigenvalues: &[f64; 3]) -> f64 {
    let log_det: f64 = eigenvalues.iter().map(|e| e.max(EIGEN_EPSILON).ln()).sum();
    1.5 * ((2.0 * std::f64::consts::PI).ln() + 1.0) + 0.5 * log_det
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdtCell {
    pub key: VoxelKey,
    pub count: u64,
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: [f64; 3],
    pub shape_index: f64,
    pub shape_class: u16,
    pub entropy: f64,
}

impl NdtCell {
    /// Derives the shape attributes of a Gaussian. Returns `Ok(None)` for
    /// degenerate covariances.
    pub fn from_gaussian(
        key: VoxelKey,
        count: u64,
        mean: Vector3<f64>,
        covariance: Matrix3<f64>,
        params: &ShapeParams,
    ) -> Result<Option<Self>> {
        let covariance = (covariance + covariance.transpose()) * 0.5;
        let mut eigenvalues = symmetric_eigenvalues(&covariance);
        if eigenvalues[2] < -NEGATIVE_EIGEN_TOLERANCE || !eigenvalues.iter().all(|e| e.is_finite()) {
            return Err(Error::Numerical(format!(
                "covariance of voxel {key:?} has eigenvalues {eigenvalues:?}"
            )));
        }
        for e in &mut eigenvalues {
            *e = e.max(0.0);
        }
        let Some(g) = shape_index(&eigenvalues) else {
            return Ok(None);
        };
        Ok(Some(Self {
            key,
            count,
            mean,
            covariance,
            eigenvalues,
            shape_index: g,
            shape_class: params.shape_class(g),
            entropy: gaussian_entropy(&eigenvalues),
        }))
    }

    pub fn category(&self) -> ShapeCategory {
        classify_shape_category(self.shape_index)
    }

    /// Re-expresses the cell under a rigid transform: `μ' = Rμ + t`,
    /// `Σ' = RΣRᵀ`. Eigenvalue-derived attributes are rotation invariant and
    /// carried over unchanged; the key is recomputed from the new mean.
    pub fn transformed(&self, pose: &Pose, resolution: f64) -> NdtCell {
        let r = &pose.rotation;
        let mean = pose.transform_point(&self.mean);
        let cov = r * self.covariance * r.transpose();
        NdtCell {
            key: VoxelKey::of(&mean, resolution),
            mean,
            covariance: (cov + cov.transpose()) * 0.5,
            ..self.clone()
        }
    }
}

/// Finalizes a voxel: `Σ = C / n`, eigen-analysis, shape class and entropy.
/// Under-populated and degenerate voxels yield `Ok(None)`.
pub fn finalize_cell(key: VoxelKey, acc: &CellAccumulator, params: &ShapeParams) -> Result<Option<NdtCell>> {
    if acc.count < params.min_points as u64 {
        return Ok(None);
    }
    NdtCell::from_gaussian(key, acc.count, acc.mean, acc.covariance(), params)
}

/// A finalized NDT map. Cells are sorted by voxel key.
///
/// Grids built from a point cloud have unique keys. Grids re-expressed in
/// another frame (see [`NdtGrid::transformed`]) may hold several cells whose
/// means fall into the same voxel of the new frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NdtGrid {
    pub resolution: f64,
    pub cells: Vec<NdtCell>,
}

impl NdtGrid {
    pub fn empty(resolution: f64) -> Self {
        Self {
            resolution,
            cells: Vec::new(),
        }
    }

    pub fn from_cells(resolution: f64, mut cells: Vec<NdtCell>) -> Self {
        cells.sort_by(|a, b| a.key.cmp(&b.key).then_with(|| cmp_vec(&a.mean, &b.mean)));
        Self { resolution, cells }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, key: VoxelKey) -> Option<&NdtCell> {
        self.cells
            .binary_search_by(|c| c.key.cmp(&key))
            .ok()
            .map(|i| &self.cells[i])
    }

    /// Smallest and largest voxel keys (component-wise).
    pub fn bounds(&self) -> Option<(VoxelKey, VoxelKey)> {
        let first = self.cells.first()?.key;
        Some(self.cells.iter().fold((first, first), |(lo, hi), c| {
            (
                VoxelKey::new(lo.i.min(c.key.i), lo.j.min(c.key.j), lo.k.min(c.key.k)),
                VoxelKey::new(hi.i.max(c.key.i), hi.j.max(c.key.j), hi.k.max(c.key.k)),
            )
        }))
    }

    pub fn transformed(&self, pose: &Pose) -> NdtGrid {
        NdtGrid::from_cells(
            self.resolution,
            self.cells.iter().map(|c| c.transformed(pose, self.resolution)).collect(),
        )
    }

    /// Serialized size in bytes.
    pub fn encoded_len(&self) -> usize {
        4 + 2 + 8 + 8 + self.cells.len() * CELL_RECORD_BYTES
    }

    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<W> {
        let mut w = Writer::new(w);
        w.bytes(GRID_MAGIC)?;
        w.u16(GRID_FORMAT_VERSION)?;
        w.f64(self.resolution)?;
        w.u64(self.cells.len() as u64)?;
        for c in &self.cells {
            write_cell(&mut w, c)?;
        }
        Ok(w.into_inner())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader::new(r);
        r.magic(GRID_MAGIC)?;
        r.version(GRID_FORMAT_VERSION)?;
        let resolution = r.f64()?;
        let n = r.u64()?;
        let mut cells = Vec::with_capacity(n.min(1 << 20) as usize);
        for _ in 0..n {
            cells.push(read_cell(&mut r)?);
        }
        Ok(Self { resolution, cells })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.write_to(Vec::with_capacity(self.encoded_len())).expect("writing to a Vec cannot fail")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn cmp_vec(a: &Vector3<f64>, b: &Vector3<f64>) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

const CELL_RECORD_BYTES: usize = 3 * 4 + 4 + 3 * 8 + 6 * 8 + 8 + 2 + 8;

pub(crate) fn write_cell<W: Write>(w: &mut Writer<W>, c: &NdtCell) -> std::io::Result<()> {
    w.i32(c.key.i)?;
    w.i32(c.key.j)?;
    w.i32(c.key.k)?;
    w.u32(c.count.min(u32::MAX as u64) as u32)?;
    for v in c.mean.iter() {
        w.f64(*v)?;
    }
    for (r, col) in UPPER_TRIANGLE {
        w.f64(c.covariance[(r, col)])?;
    }
    w.f64(c.shape_index)?;
    w.u16(c.shape_class)?;
    w.f64(c.entropy)
}

pub(crate) fn read_cell<R: Read>(r: &mut Reader<R>) -> Result<NdtCell> {
    let key = VoxelKey::new(r.i32()?, r.i32()?, r.i32()?);
    let count = r.u32()? as u64;
    let mean = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
    let mut covariance = Matrix3::zeros();
    for (row, col) in UPPER_TRIANGLE {
        let v = r.f64()?;
        covariance[(row, col)] = v;
        covariance[(col, row)] = v;
    }
    let shape_index = r.f64()?;
    let shape_class = r.u16()?;
    let entropy = r.f64()?;
    if shape_class == 0 {
        return Err(Error::Corrupt(format!("shape class {shape_class} out of range")));
    }
    let mut eigenvalues = symmetric_eigenvalues(&covariance);
    for e in &mut eigenvalues {
        *e = e.max(0.0);
    }
    Ok(NdtCell {
        key,
        count,
        mean,
        covariance,
        eigenvalues,
        shape_index,
        shape_class,
        entropy,
    })
}

const UPPER_TRIANGLE: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Voxel accumulators that have not been finalized yet.
#[derive(Debug, Clone, Default)]
pub struct VoxelAccumulators {
    pub resolution: f64,
    pub voxels: FxHashMap<VoxelKey, CellAccumulator>,
}

impl VoxelAccumulators {
    pub fn new(resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidParams(format!("resolution must be > 0, got {resolution}")));
        }
        Ok(Self {
            resolution,
            voxels: FxHashMap::default(),
        })
    }

    pub fn insert(&mut self, p: &Point3) {
        self.voxels.entry(VoxelKey::of(p, self.resolution)).or_default().push(p);
    }

    pub fn extend<'a>(&mut self, points: impl IntoIterator<Item = &'a Point3>) {
        for p in points {
            self.insert(p);
        }
    }

    pub fn finalize(&self, params: &ShapeParams) -> Result<NdtGrid> {
        let mut cells = Vec::with_capacity(self.voxels.len());
        for (key, acc) in &self.voxels {
            if let Some(cell) = finalize_cell(*key, acc, params)? {
                cells.push(cell);
            }
        }
        cells.sort_unstable_by_key(|c| c.key);
        Ok(NdtGrid {
            resolution: self.resolution,
            cells,
        })
    }
}

/// Builds the NDT grid of a cloud. An empty cloud gives an empty grid.
pub fn build_grid(cloud: &PointCloud, resolution: f64, params: &ShapeParams) -> Result<NdtGrid> {
    params.validate()?;
    let mut acc = VoxelAccumulators::new(resolution)?;
    acc.voxels.reserve(cloud.len() / 16);
    acc.extend(&cloud.points);
    acc.finalize(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Two-pass oracle: mean first, then Σ (p-μ)(p-μ)ᵀ / n.
    fn batch_stats(points: &[Point3]) -> (Vector3<f64>, Matrix3<f64>) {
        let n = points.len() as f64;
        let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
        let cov = points
            .iter()
            .fold(Matrix3::zeros(), |a, p| a + (p - mean) * (p - mean).transpose())
            / n;
        (mean, cov)
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-12
    }

    #[test]
    fn first_point_sets_mean() {
        let acc = CellAccumulator::new().accumulate(&Point3::new(1.0, 2.0, 3.0));
        assert_eq!(acc.count, 1);
        assert_eq!(acc.mean, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(acc.scatter, Matrix3::zeros());
    }

    #[test]
    fn second_point_hand_evaluated() {
        let acc = CellAccumulator::new()
            .accumulate(&Point3::zeros())
            .accumulate(&Point3::new(2.0, 0.0, 0.0));
        assert_eq!(acc.mean, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(acc.scatter[(0, 0)], 2.0);
        assert_eq!(acc.scatter.abs().sum(), 2.0);
    }

    #[test]
    fn one_pass_matches_batch_on_1000_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point3> = (0..1000)
            .map(|_| Point3::new(rng.random_range(-5.0..5.0), rng.random_range(10.0..12.0), rng.random_range(-1.0..0.0)))
            .collect();
        let acc = pts.iter().fold(CellAccumulator::new(), |a, p| a.accumulate(p));
        let (mean, cov) = batch_stats(&pts);
        for i in 0..3 {
            assert!(close(acc.mean[i], mean[i], 1e-9));
            for j in 0..3 {
                assert!(close(acc.covariance()[(i, j)], cov[(i, j)], 1e-9));
            }
        }
    }

    #[test]
    fn identity_covariance_shape_and_entropy() {
        let cell = NdtCell::from_gaussian(VoxelKey::default(), 10, Vector3::zeros(), Matrix3::identity(), &ShapeParams::default())
            .unwrap()
            .unwrap();
        assert_eq!(cell.shape_index, 1.0);
        assert_relative_eq!(cell.entropy, 4.256816, epsilon = 1e-6);
        assert_eq!(cell.shape_class, 4);
        assert_eq!(cell.category(), ShapeCategory::Sphere);
    }

    #[test]
    fn shape_index_examples() {
        assert_relative_eq!(shape_index(&[4.0, 4.0, 0.16]).unwrap(), 0.04, epsilon = 1e-15);
        assert_eq!(classify_shape_category(0.04), ShapeCategory::Plane);
        assert_eq!(shape_index(&[4.0, 1.0, 1.0]), Some(4.0));
        assert_eq!(classify_shape_category(4.0), ShapeCategory::Line);
        assert_eq!(shape_index(&[4.0, 1e-10, 0.0]), None);
    }

    #[test]
    fn category_boundaries() {
        use ShapeCategory::*;
        let cases = [
            (0.0, Other),
            (0.3, Plane),
            (0.30001, Ellipsoid),
            (0.7, Ellipsoid),
            (1.0, Sphere),
            (2.0, Sphere),
            (8.0, Line),
            (8.5, Other),
        ];
        for (g, want) in cases {
            assert_eq!(classify_shape_category(g), want, "g = {g}");
        }
    }

    #[test]
    fn shape_class_rounding_and_clamping() {
        let p = ShapeParams::default();
        assert_eq!(p.class_count(), 8);
        assert_eq!(p.shape_class(1.0), 4);
        assert_eq!(p.shape_class(0.0), 1);
        assert_eq!(p.shape_class(0.3), 1);
        assert_eq!(p.shape_class(0.31), 2);
        assert_eq!(p.shape_class(2.1), 7);
        assert_eq!(p.shape_class(2.4), 8);
        assert_eq!(p.shape_class(4.0), 8);
        assert_eq!(p.shape_class(1e6), 8);
    }

    #[test]
    fn closed_form_eigenvalues_agree_with_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let a = Matrix3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let m = a * a.transpose();
            let mine = symmetric_eigenvalues(&m);
            let mut theirs: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
            theirs.sort_by(|x, y| y.total_cmp(x));
            for (x, y) in mine.iter().zip(&theirs) {
                assert!((x - y).abs() <= 1e-12 * m.norm().max(1.0), "{mine:?} vs {theirs:?}");
            }
        }
        assert_eq!(symmetric_eigenvalues(&Matrix3::from_diagonal(&Vector3::new(1.0, 3.0, 2.0))), [3.0, 2.0, 1.0]);
    }

    #[test]
    fn min_points_threshold_omits_voxel() {
        let pts = vec![Point3::new(0.1, 0.1, 0.1), Point3::new(0.5, 0.2, 0.9), Point3::new(1.0, 1.5, 0.3)];
        let grid = build_grid(&PointCloud::new(pts), 2.0, &ShapeParams::default()).unwrap();
        assert!(grid.is_empty());
    }

    #[test]
    fn empty_cloud_gives_empty_grid() {
        let grid = build_grid(&PointCloud::default(), 2.0, &ShapeParams::default()).unwrap();
        assert!(grid.is_empty());
        assert!(grid.bounds().is_none());
    }

    #[test]
    fn non_positive_resolution_rejected() {
        assert!(matches!(
            build_grid(&PointCloud::default(), 0.0, &ShapeParams::default()),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn single_voxel_and_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let one: Vec<Point3> = (0..100)
            .map(|_| Point3::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)))
            .collect();
        let grid = build_grid(&PointCloud::new(one), 2.0, &ShapeParams::default()).unwrap();
        assert_eq!(grid.len(), 1);
        assert_eq!(grid.cells[0].count, 100);

        let a: Vec<Point3> = (0..50)
            .map(|_| Point3::new(rng.random_range(0.2..1.8), rng.random_range(0.2..1.8), rng.random_range(0.2..1.8)))
            .collect();
        let b: Vec<Point3> = (0..50)
            .map(|_| Point3::new(rng.random_range(-9.8..-8.2), rng.random_range(4.2..5.8), rng.random_range(0.2..1.8)))
            .collect();
        let cloud = PointCloud::new(a.iter().chain(&b).copied().collect());
        let grid = build_grid(&cloud, 2.0, &ShapeParams::default()).unwrap();
        assert_eq!(grid.len(), 2);
        for cluster in [&a, &b] {
            let (mean, _) = batch_stats(cluster);
            let cell = grid.get(VoxelKey::of(&mean, 2.0)).unwrap();
            assert!((cell.mean - mean).amax() <= 1e-9);
        }
    }

    #[test]
    fn floor_keys_for_negative_coordinates() {
        assert_eq!(VoxelKey::of(&Point3::new(-0.1, 0.1, -2.0), 2.0), VoxelKey::new(-1, 0, -1));
    }

    #[test]
    fn flat_cell_has_finite_entropy() {
        let pts: Vec<Point3> = (0..20).map(|i| Point3::new((i % 5) as f64 * 0.3, (i / 5) as f64 * 0.3, 0.5)).collect();
        let grid = build_grid(&PointCloud::new(pts), 2.0, &ShapeParams::default()).unwrap();
        let cell = &grid.cells[0];
        assert!(cell.entropy.is_finite());
        assert_eq!(cell.shape_class, 1);
    }

    #[test]
    fn grid_serialization_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3> = (0..5000)
            .map(|_| Point3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-2.0..4.0)))
            .collect();
        let params = ShapeParams::default();
        let grid = build_grid(&PointCloud::new(pts), 2.0, &params).unwrap();
        let bytes = grid.to_bytes();
        assert_eq!(bytes.len(), grid.encoded_len());
        let back = NdtGrid::read_from(&bytes[..]).unwrap();
        assert_eq!(back.cells.len(), grid.cells.len());
        for (a, b) in back.cells.iter().zip(&grid.cells) {
            assert_eq!(a.key, b.key);
            for (x, y) in a.mean.iter().chain(a.covariance.iter()).zip(b.mean.iter().chain(b.covariance.iter())) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(a.shape_index.to_bits(), b.shape_index.to_bits());
            assert_eq!(a.entropy.to_bits(), b.entropy.to_bits());
            assert_eq!(a.shape_class, b.shape_class);
        }
    }

    #[test]
    fn grid_bad_magic_and_version() {
        let grid = NdtGrid::empty(2.0);
        let mut bytes = grid.to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            NdtGrid::read_from(&bytes[..]),
            Err(Error::VersionMismatch { expected: 1, found: 9 })
        ));
        bytes[0] = b'X';
        assert!(matches!(NdtGrid::read_from(&bytes[..]), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn transformed_cell_keeps_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point3> = (0..200)
            .map(|_| {
                let n: f64 = StandardNormal.sample(&mut rng);
                Point3::new(1.0 + 0.5 * n, 1.0 + 0.05 * rng.random::<f64>(), 1.0 + 0.05 * rng.random::<f64>())
            })
            .collect();
        let params = ShapeParams::default();
        let acc = pts.iter().fold(CellAccumulator::new(), |a, p| a.accumulate(p));
        let cell = finalize_cell(VoxelKey::default(), &acc, &params).unwrap().unwrap();
        let pose = Pose::from_yaw(0.7, Vector3::new(3.0, -4.0, 0.5), 0);
        let moved = cell.transformed(&pose, 2.0);
        let again = NdtCell::from_gaussian(moved.key, moved.count, moved.mean, moved.covariance, &params)
            .unwrap()
            .unwrap();
        assert!((again.shape_index - cell.shape_index).abs() <= 1e-9);
        assert!((again.entropy - cell.entropy).abs() <= 1e-9);
        assert_eq!(again.shape_class, cell.shape_class);
        assert_eq!(moved.key, VoxelKey::of(&moved.mean, 2.0));
    }

    proptest! {
        #[test]
        fn accumulation_is_permutation_invariant(seed in any::<u64>(), n in 2usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pts: Vec<Point3> = (0..n)
                .map(|_| Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect();
            let a = pts.iter().fold(CellAccumulator::new(), |a, p| a.accumulate(p));
            pts.reverse();
            pts.swap(0, n / 2);
            let b = pts.iter().fold(CellAccumulator::new(), |a, p| a.accumulate(p));
            for i in 0..3 {
                prop_assert!(close(a.mean[i], b.mean[i], 1e-9));
                for j in 0..3 {
                    prop_assert!(close(a.covariance()[(i, j)], b.covariance()[(i, j)], 1e-9));
                    prop_assert_eq!(a.scatter[(i, j)], a.scatter[(j, i)]);
                }
            }
        }

        #[test]
        fn eigenvalues_sorted_and_entropy_scales(seed in any::<u64>(), c in 1.01f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let cov = a * a.transpose() + Matrix3::identity() * 0.01;
            let p = ShapeParams::default();
            let cell = NdtCell::from_gaussian(VoxelKey::default(), 10, Vector3::zeros(), cov, &p).unwrap().unwrap();
            let [e1, e2, e3] = cell.eigenvalues;
            prop_assert!(e1 >= e2 && e2 >= e3 && e3 >= 0.0);
            let scaled = NdtCell::from_gaussian(VoxelKey::default(), 10, Vector3::zeros(), cov * c, &p).unwrap().unwrap();
            prop_assert!((scaled.entropy - cell.entropy - 1.5 * c.ln()).abs() <= 1e-9);
        }
    }
}
