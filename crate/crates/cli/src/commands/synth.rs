use std::fs;
use std::path::PathBuf;

use ndtmc::cloud_io::{write_kitti_poses, write_kitti_scan};
use ndtmc::synth::{loop_trajectory, rng, World};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Output directory; receives `velodyne/NNNNNN.bin` and `poses.txt`.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    /// Circumference of the circular trajectory (m).
    #[arg(long, default_value_t = 200.0)]
    loop_length: f64,
    /// Distance between frames (m).
    #[arg(long, default_value_t = 2.0)]
    step: f64,
    /// Surface sample density (points per m²).
    #[arg(long)]
    density: Option<f64>,
}

/// Frame `i` draws from its own seeded generator, so output does not
/// depend on the thread count.
fn frame_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1)
}

pub fn run(seed: u64, args: Args) -> CliResult<()> {
    if args.frames == 0 {
        return Err(CliError::input("--frames must be >= 1"));
    }
    if !(args.loop_length > 0.0 && args.step > 0.0) {
        return Err(CliError::input("--loop-length and --step must be > 0"));
    }
    let poses = loop_trajectory(args.loop_length, args.step, args.frames);
    let radius = args.loop_length / std::f64::consts::TAU;
    let mut world = World::random(&mut rng(seed), 2.0 * radius + 100.0);
    if let Some(d) = args.density {
        if d.is_nan() || d <= 0.0 {
            return Err(CliError::input("--density must be > 0"));
        }
        world.density = d;
        world.ground_density = d / 10.0;
    }

    let dir = args.output.join("velodyne");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    poses.par_iter().enumerate().try_for_each(|(i, pose)| {
        let scan = world.observe(pose, &mut rng(frame_seed(seed, i)));
        write_kitti_scan(dir.join(format!("{i:06}.bin")), &scan).map_err(CliError::from)
    })?;
    write_kitti_poses(args.output.join("poses.txt"), &poses)?;
    eprintln!("wrote {} frames to {}", poses.len(), args.output.display());
    Ok(())
}
