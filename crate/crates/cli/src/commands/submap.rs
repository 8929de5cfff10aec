use std::path::PathBuf;

use ndtmc::cloud_io::load_kitti_scan;
use ndtmc::submap::{save_places, SubmapBuilder};

use super::ensure_parent;
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::inputs::{attach_times, list_scans, load_poses, pose_for};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Scan directory.
    scans: PathBuf,
    /// Output places file.
    #[arg(short, long)]
    output: PathBuf,
    /// KITTI pose file.
    #[arg(long)]
    poses: Option<PathBuf>,
    /// KITTI `times.txt`; enables the update-period throttle.
    #[arg(long)]
    times: Option<PathBuf>,
}

/// Scans are consumed in frame order. A trailing segment shorter than the
/// place length is not emitted.
pub fn run(config: &Config, args: Args) -> CliResult<()> {
    let scans = list_scans(&args.scans)?;
    let poses_path = args
        .poses
        .as_ref()
        .or(config.paths.poses.as_ref())
        .ok_or_else(|| CliError::input("--poses is required (or set paths.poses)"))?;
    let mut poses = load_poses(poses_path)?;
    if let Some(times) = args.times.as_ref().or(config.paths.times.as_ref()) {
        attach_times(&mut poses, times)?;
    }

    let mut builder = SubmapBuilder::new(config.submap, config.resolution, config.shape)?;
    let mut places = Vec::new();
    for scan in &scans {
        let pose = pose_for(&poses, scan.id)?;
        let cloud = load_kitti_scan(&scan.path)?;
        if let Some(place) = builder.push(&cloud, &pose)? {
            eprintln!(
                "place {}: frames {}..={}, {} cells",
                place.place_id,
                place.frames.0,
                place.frames.1,
                place.grid.len()
            );
            places.push(place);
        }
    }
    ensure_parent(&args.output)?;
    save_places(&args.output, &places)?;
    eprintln!("wrote {} places to {}", places.len(), args.output.display());
    Ok(())
}
