//! Locating and loading command inputs.

use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndtmc::cloud_io::{load_kitti_poses, load_kitti_scan, Pose};
use ndtmc::descriptor::{extract, extract_from_cloud, Signature};
use ndtmc::matcher::DescriptorDatabase;
use ndtmc::submap::load_places;
use rayon::prelude::*;

use crate::config::Config;
use crate::error::{CliError, CliResult};

/// One scan file and the frame id it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFile {
    pub id: u64,
    pub path: PathBuf,
}

/// What a path argument points at.
#[derive(Debug)]
pub enum Source {
    Scans(Vec<ScanFile>),
    Places(PathBuf),
    Database(PathBuf),
}

impl Source {
    /// Directories are scan sets; files are told apart by their magic.
    pub fn detect(path: &Path) -> CliResult<Self> {
        if path.is_dir() {
            return Ok(Source::Scans(list_scans(path)?));
        }
        let mut magic = [0u8; 4];
        let mut f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let n = f.read(&mut magic).map_err(|e| CliError::io(path, e))?;
        if n == 4 && &magic == b"NDPL" {
            Ok(Source::Places(path.to_path_buf()))
        } else {
            Ok(Source::Database(path.to_path_buf()))
        }
    }
}

/// `*.bin` files in `dir` (or in `dir/velodyne` when `dir` has none),
/// sorted by name. Ids are the numeric file stems when every stem is a
/// number, positions in the sorted list otherwise.
pub fn list_scans(dir: &Path) -> CliResult<Vec<ScanFile>> {
    let mut paths = bin_files(dir)?;
    if paths.is_empty() && dir.join("velodyne").is_dir() {
        paths = bin_files(&dir.join("velodyne"))?;
    }
    if paths.is_empty() {
        return Err(CliError::input(format!("{}: no .bin scans found", dir.display())));
    }
    let stems: Option<Vec<u64>> = paths
        .iter()
        .map(|p| p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()))
        .collect();
    let ids = stems.unwrap_or_else(|| (0..paths.len() as u64).collect());
    let mut seen = BTreeSet::new();
    for (id, path) in ids.iter().zip(&paths) {
        if !seen.insert(*id) {
            return Err(CliError::input(format!("{}: duplicate frame id {id}", path.display())));
        }
    }
    let mut scans: Vec<ScanFile> = ids.into_iter().zip(paths).map(|(id, path)| ScanFile { id, path }).collect();
    scans.sort_by_key(|s| s.id);
    Ok(scans)
}

fn bin_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "bin") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_poses(path: &Path) -> CliResult<Vec<Pose>> {
    load_kitti_poses(path).map_err(|e| CliError::from(e).context(path.display()))
}

/// Attaches timestamps from a KITTI `times.txt` (one value per line).
pub fn attach_times(poses: &mut [Pose], path: &Path) -> CliResult<()> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let times: Vec<f64> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse()
                .map_err(|_| CliError::input(format!("{} line {}: not a number: {l:?}", path.display(), i + 1)))
        })
        .collect::<CliResult<_>>()?;
    if times.len() != poses.len() {
        return Err(CliError::input(format!(
            "{} has {} timestamps for {} poses",
            path.display(),
            times.len(),
            poses.len()
        )));
    }
    for (p, t) in poses.iter_mut().zip(times) {
        p.timestamp = Some(t);
    }
    Ok(())
}

pub fn pose_for(poses: &[Pose], id: u64) -> CliResult<Pose> {
    poses
        .get(id as usize)
        .cloned()
        .ok_or_else(|| CliError::input(format!("no pose for frame {id} ({} poses loaded)", poses.len())))
}

/// A signature with its pose and how long extraction took.
pub struct Extracted {
    pub signature: Signature,
    pub pose: Option<Pose>,
    pub points: usize,
    pub elapsed: Duration,
}

/// Extracts one signature per scan or place, in parallel, in id order.
pub fn extract_source(source: &Source, config: &Config, poses: Option<&[Pose]>) -> CliResult<Vec<Extracted>> {
    match source {
        Source::Scans(scans) => scans
            .par_iter()
            .map(|scan| {
                let pose = poses.map(|p| pose_for(p, scan.id)).transpose()?;
                let cloud = load_kitti_scan(&scan.path)?;
                let start = Instant::now();
                let signature = extract_from_cloud(&cloud, config.resolution, &config.partition, &config.shape)
                    .map_err(|e| CliError::from(e).context(scan.path.display()))?
                    .with_frame_id(scan.id);
                Ok(Extracted {
                    signature,
                    pose,
                    points: cloud.len(),
                    elapsed: start.elapsed(),
                })
            })
            .collect(),
        Source::Places(path) => {
            let places = load_places(path).map_err(|e| CliError::from(e).context(path.display()))?;
            if let Some(first) = places.first() {
                if first.grid.resolution != config.resolution {
                    eprintln!(
                        "note: places were built at {} m resolution, config says {} m",
                        first.grid.resolution, config.resolution
                    );
                }
            }
            Ok(places
                .par_iter()
                .map(|place| {
                    let start = Instant::now();
                    let signature = extract(&place.grid, &config.partition, &config.shape).with_frame_id(place.place_id);
                    Extracted {
                        signature,
                        pose: Some(place.anchor.clone()),
                        points: place.grid.len(),
                        elapsed: start.elapsed(),
                    }
                })
                .collect())
        }
        Source::Database(path) => Err(CliError::input(format!(
            "{} is a descriptor database, expected scans or places",
            path.display()
        ))),
    }
}

/// Query signatures from scans, places or an existing database.
pub fn query_signatures(source: &Source, config: &Config) -> CliResult<Vec<Signature>> {
    match source {
        Source::Database(path) => {
            let db = DescriptorDatabase::load(path).map_err(|e| CliError::from(e).context(path.display()))?;
            Ok(db.entries().iter().map(|e| e.signature.clone()).collect())
        }
        other => Ok(extract_source(other, config, None)?.into_iter().map(|e| e.signature).collect()),
    }
}
