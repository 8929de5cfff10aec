//! Descriptor database, retrieval and column-shift matching.
//!
//! A query proceeds in three stages:
//!
//! 1. K nearest geometric keys from the kd-tree.
//! 2. For each candidate, a coarse column shift from the circular
//!    cross-correlation of the sector keys.
//! 3. The correlation distance evaluated at shifts within a window around
//!    that estimate; the candidate with the smallest distance wins.
//!
//! The correlation distance between a query `Q` and candidate `C` at shift
//! `k` is
//!
//! ```text
//! g_k = 1 - (1/N_θ) Σ_i cos∠(q_{(i+k) mod N_θ} - Q̄, c_i - C̄)
//! ```
//!
//! where `q_j`, `c_i` are columns and `Q̄`, `C̄` the means of all elements.
//! A column whose centered norm is zero contributes a cosine of 0.

use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud_io::Pose;
use crate::codec::{Reader, Writer};
use crate::descriptor::{sector_key, Descriptor, SectorKey, Signature};
use crate::error::{Error, Result};
use crate::kdtree::KdTree;

fn check_same_shape(a: &Descriptor, b: &Descriptor) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "descriptor {}×{} vs {}×{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// Correlation distance of `query` shifted by `k` columns against `candidate`.
pub fn column_shift_distance(query: &Descriptor, candidate: &Descriptor, k: usize) -> Result<f64> {
    check_same_shape(query, candidate)?;
    let n = query.cols();
    if k >= n {
        return Err(Error::InvalidParams(format!("shift {k} out of range 0..{n}")));
    }
    Ok(PreparedDescriptor::new(query).distance(&PreparedDescriptor::new(candidate), k))
}

/// Unit-normalized centered columns, stored column-major. The global mean is
/// shift invariant, so this is computed once per descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDescriptor {
    rows: usize,
    cols: usize,
    /// Zero columns encode "zero centered norm".
    units: Vec<f64>,
}

impl PreparedDescriptor {
    pub fn new(d: &Descriptor) -> Self {
        let (rows, cols) = (d.rows(), d.cols());
        let mean = d.mean();
        let mut units = vec![0.0; rows * cols];
        for c in 0..cols {
            let col = &mut units[c * rows..(c + 1) * rows];
            for (slot, v) in col.iter_mut().zip(d.column(c)) {
                *slot = v - mean;
            }
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                col.iter_mut().for_each(|v| *v /= norm);
            } else {
                col.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Self { rows, cols, units }
    }

    fn column(&self, c: usize) -> &[f64] {
        &self.units[c * self.rows..(c + 1) * self.rows]
    }

    /// `g_k` with `self` as the (shifted) query.
    pub fn distance(&self, candidate: &PreparedDescriptor, k: usize) -> f64 {
        let n = self.cols;
        let sum: f64 = (0..n)
            .map(|i| {
                let q = self.column((i + k) % n);
                let c = candidate.column(i);
                q.iter().zip(c).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0)
            })
            .sum();
        (1.0 - sum / n as f64).clamp(0.0, 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub shift: usize,
    pub distance: f64,
}

fn best_over(query: &PreparedDescriptor, candidate: &PreparedDescriptor, shifts: impl Iterator<Item = usize>) -> Alignment {
    let mut best = Alignment {
        shift: 0,
        distance: f64::INFINITY,
    };
    for k in shifts {
        let d = query.distance(candidate, k);
        if d < best.distance || (d == best.distance && k < best.shift) {
            best = Alignment { shift: k, distance: d };
        }
    }
    best
}

/// Minimum correlation distance over `window` (all shifts when `None`).
/// Ties go to the smallest shift.
pub fn best_alignment(query: &Descriptor, candidate: &Descriptor, window: Option<&[usize]>) -> Result<Alignment> {
    check_same_shape(query, candidate)?;
    let n = query.cols();
    let (q, c) = (PreparedDescriptor::new(query), PreparedDescriptor::new(candidate));
    match window {
        None => Ok(best_over(&q, &c, 0..n)),
        Some(w) => {
            if let Some(bad) = w.iter().find(|&&k| k >= n) {
                return Err(Error::InvalidParams(format!("shift {bad} out of range 0..{n}")));
            }
            if w.is_empty() {
                return Err(Error::InvalidParams("empty shift window".into()));
            }
            Ok(best_over(&q, &c, w.iter().copied()))
        }
    }
}

/// Shift maximizing the circular cross-correlation of the centered sector
/// keys. Ties go to the smallest shift.
pub fn estimate_shift(query: &SectorKey, candidate: &SectorKey) -> Result<usize> {
    let n = query.len();
    if candidate.len() != n {
        return Err(Error::DimensionMismatch(format!("sector keys of length {n} and {}", candidate.len())));
    }
    if n == 0 {
        return Ok(0);
    }
    let center = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| x - m).collect::<Vec<_>>()
    };
    let (q, c) = (center(&query.values), center(&candidate.values));
    let mut best = (0, f64::NEG_INFINITY);
    for k in 0..n {
        let corr: f64 = (0..n).map(|i| q[(i + k) % n] * c[i]).sum();
        if corr > best.1 {
            best = (k, corr);
        }
    }
    Ok(best.0)
}

/// Shifts within `half_width` of `center`, circularly, ascending.
pub fn shift_window(center: usize, half_width: usize, sectors: usize) -> Vec<usize> {
    if 2 * half_width + 1 >= sectors {
        return (0..sectors).collect();
    }
    let mut w: Vec<usize> = (0..=2 * half_width)
        .map(|d| (center + sectors + d - half_width) % sectors)
        .collect();
    w.sort_unstable();
    w
}

#[derive(Debug, Clone)]
pub struct DatabaseEntry {
    pub signature: Signature,
    pub pose: Option<Pose>,
    prepared: PreparedDescriptor,
}

impl DatabaseEntry {
    pub fn new(signature: Signature, pose: Option<Pose>) -> Self {
        let prepared = PreparedDescriptor::new(&signature.descriptor);
        Self {
            signature,
            pose,
            prepared,
        }
    }

    pub fn frame_id(&self) -> u64 {
        self.signature.frame_id()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryParams {
    /// Number of geometric-key neighbours scored per query (`K`).
    pub candidates: usize,
    /// Matches with distance at or below this value are accepted.
    pub threshold: f64,
    /// Half-width of the shift window around the sector-key estimate;
    /// `None` scores all shifts.
    pub window_half_width: Option<usize>,
    /// Candidates whose frame id is within this many frames of the query
    /// are skipped (0 disables).
    #[serde(default)]
    pub exclusion_gap: u64,
    /// Only consider candidates with a smaller frame id than the query.
    #[serde(default)]
    pub past_only: bool,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self {
            candidates: 10,
            threshold: 0.6,
            window_half_width: Some(3),
            exclusion_gap: 0,
            past_only: false,
        }
    }
}

impl QueryParams {
    fn admits(&self, query_id: u64, candidate_id: u64) -> bool {
        if self.past_only && candidate_id >= query_id {
            return false;
        }
        self.exclusion_gap == 0 || query_id.abs_diff(candidate_id) >= self.exclusion_gap
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub query_id: u64,
    pub candidate_id: u64,
    /// Position of the candidate in the database.
    pub entry: usize,
    pub shift: usize,
    pub distance: f64,
    pub accepted: bool,
}

impl MatchResult {
    /// Yaw of the query relative to the candidate implied by the shift.
    pub fn yaw(&self, sectors: usize) -> f64 {
        self.shift as f64 * std::f64::consts::TAU / sectors as f64
    }
}

const DATABASE_TRAILER: &[u8; 4] = b"NDDB";

/// Append-only collection of signatures with a kd-tree over geometric keys.
#[derive(Debug, Clone, Default)]
pub struct DescriptorDatabase {
    entries: Vec<DatabaseEntry>,
    index: Option<KdTree>,
}

impl DescriptorDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry. The index must be rebuilt before the next query.
    pub fn push(&mut self, signature: Signature, pose: Option<Pose>) -> Result<()> {
        if let Some(first) = self.entries.first() {
            let (a, b) = (&first.signature, &signature);
            if !a.descriptor.same_shape(&b.descriptor) || a.geometric_key.len() != b.geometric_key.len() {
                return Err(Error::DimensionMismatch(
                    "entry shape differs from the rest of the database".into(),
                ));
            }
        }
        self.entries.push(DatabaseEntry::new(signature, pose));
        self.index = None;
        Ok(())
    }

    pub fn entries(&self) -> &[DatabaseEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_built(&self) -> bool {
        self.index.is_some()
    }

    pub fn build_index(&mut self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let keys: Vec<&[f64]> = self
            .entries
            .iter()
            .map(|e| e.signature.geometric_key.histogram.as_slice())
            .collect();
        self.index = Some(KdTree::build(&keys)?);
        Ok(())
    }

    /// The `k` entries with the nearest geometric keys (entry index, squared distance).
    pub fn nearest_keys(&self, key: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        let index = self.index.as_ref().ok_or(Error::IndexNotBuilt)?;
        if key.len() != index.dim() {
            return Err(Error::DimensionMismatch(format!(
                "geometric key of length {}, database uses {}",
                key.len(),
                index.dim()
            )));
        }
        Ok(index.nearest(key, k).into_iter().map(|n| (n.index, n.dist_sq)).collect())
    }

    fn check_query(&self, q: &Signature) -> Result<&KdTree> {
        let index = self.index.as_ref().ok_or(Error::IndexNotBuilt)?;
        let first = &self.entries[0].signature;
        if !first.descriptor.same_shape(&q.descriptor) || q.geometric_key.len() != index.dim() {
            return Err(Error::DimensionMismatch("query shape differs from the database".into()));
        }
        Ok(index)
    }

    /// Scores every retrieved candidate, best first (ties by frame id).
    pub fn query_ranked(&self, q: &Signature, params: &QueryParams) -> Result<Vec<MatchResult>> {
        if params.candidates == 0 {
            return Err(Error::InvalidParams("candidate count K must be >= 1".into()));
        }
        let index = self.check_query(q)?;
        let qid = q.frame_id();
        let neighbours = index.nearest_filtered(&q.geometric_key.histogram, params.candidates, |i| {
            params.admits(qid, self.entries[i].frame_id())
        });
        let prepared = PreparedDescriptor::new(&q.descriptor);
        let sectors = q.descriptor.cols();
        let mut out = Vec::with_capacity(neighbours.len());
        for n in neighbours {
            let entry = &self.entries[n.index];
            let alignment = match params.window_half_width {
                None => best_over(&prepared, &entry.prepared, 0..sectors),
                Some(w) => {
                    let center = estimate_shift(&q.sector_key, &entry.signature.sector_key)?;
                    best_over(&prepared, &entry.prepared, shift_window(center, w, sectors).into_iter())
                }
            };
            out.push(MatchResult {
                query_id: qid,
                candidate_id: entry.frame_id(),
                entry: n.index,
                shift: alignment.shift,
                distance: alignment.distance,
                accepted: alignment.distance <= params.threshold,
            });
        }
        out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.candidate_id.cmp(&b.candidate_id)));
        Ok(out)
    }

    /// Best candidate for `q`, or `None` when no entry is admissible.
    pub fn query(&self, q: &Signature, params: &QueryParams) -> Result<Option<MatchResult>> {
        Ok(self.query_ranked(q, params)?.into_iter().next())
    }

    /// Runs queries concurrently; results come back in input order.
    pub fn query_batch(&self, queries: &[Signature], params: &QueryParams) -> Vec<Result<Option<MatchResult>>> {
        queries.par_iter().map(|q| self.query(q, params)).collect()
    }

    /// Writes every entry followed by a table of contents
    /// `{count u64, offsets u64 × count}` and a trailer
    /// `{toc offset u64, "NDDB"}`.
    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<W> {
        let mut w = Writer::new(w);
        let mut offsets = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            offsets.push(w.position());
            e.signature.write_record(&mut w)?;
            match &e.pose {
                None => w.u8(0)?,
                Some(p) => {
                    w.u8(1)?;
                    for v in p.to_row_major() {
                        w.f64(v)?;
                    }
                }
            }
        }
        let toc = w.position();
        w.u64(offsets.len() as u64)?;
        for o in offsets {
            w.u64(o)?;
        }
        w.u64(toc)?;
        w.bytes(DATABASE_TRAILER)?;
        Ok(w.into_inner())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.write_to(Vec::new()).expect("writing to a Vec cannot fail")
    }

    /// Reads a database written by [`DescriptorDatabase::write_to`]. The
    /// index is not built.
    pub fn read_from<R: Read + Seek>(mut r: R) -> Result<Self> {
        let corrupt = |e: std::io::Error| Error::Corrupt(e.to_string());
        let end = r.seek(SeekFrom::End(0)).map_err(corrupt)?;
        if end < 12 {
            return Err(Error::Corrupt(format!("database file of {end} bytes is too short")));
        }
        r.seek(SeekFrom::Start(end - 12)).map_err(corrupt)?;
        let mut reader = Reader::new(&mut r);
        let toc = reader.u64()?;
        reader.magic(DATABASE_TRAILER)?;
        if toc > end - 12 {
            return Err(Error::Corrupt(format!("table of contents at {toc} is past the end of the file")));
        }
        r.seek(SeekFrom::Start(toc)).map_err(corrupt)?;
        let mut reader = Reader::new(&mut r);
        let count = reader.u64()?;
        if count.saturating_mul(8) > end - toc {
            return Err(Error::Corrupt(format!("entry count {count} does not fit the file")));
        }
        let offsets = (0..count).map(|_| reader.u64()).collect::<Result<Vec<_>>>()?;
        let mut db = DescriptorDatabase::new();
        for (i, offset) in offsets.into_iter().enumerate() {
            if offset >= toc {
                return Err(Error::Corrupt(format!("entry {i} offset {offset} is out of range")));
            }
            r.seek(SeekFrom::Start(offset)).map_err(corrupt)?;
            let mut reader = Reader::new(std::io::BufReader::new(&mut r));
            let signature = Signature::read_record(&mut reader)?;
            let pose = match reader.u8()? {
                0 => None,
                1 => {
                    let mut m = [0.0; 12];
                    for v in &mut m {
                        *v = reader.f64()?;
                    }
                    Some(Pose::from_row_major(&m, signature.frame_id() as usize)?)
                }
                flag => return Err(Error::Corrupt(format!("entry {i} has pose flag {flag}"))),
            };
            let recomputed = sector_key(&signature.descriptor);
            let consistent = recomputed
                .values
                .iter()
                .zip(&signature.sector_key.values)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0));
            if !consistent {
                return Err(Error::Corrupt(format!("entry {i} sector key does not match its descriptor")));
            }
            db.push(signature, pose)?;
        }
        Ok(db)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .and_then(|mut w| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(f)
    }
}
