use std::path::PathBuf;
use std::time::Duration;

use ndtmc::matcher::DescriptorDatabase;

use super::ensure_parent;
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::inputs::{extract_source, load_poses, Source};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Scan directory (`*.bin`, or a `velodyne/` subdirectory) or places file.
    input: PathBuf,
    /// Output database.
    #[arg(short, long)]
    output: PathBuf,
    /// KITTI pose file; stored with each entry. Places carry their own poses.
    #[arg(long)]
    poses: Option<PathBuf>,
    /// Suppress per-frame timing lines.
    #[arg(short, long)]
    quiet: bool,
}

pub fn run(config: &Config, args: Args) -> CliResult<()> {
    let source = Source::detect(&args.input)?;
    let poses = match (&source, args.poses.as_ref().or(config.paths.poses.as_ref())) {
        (Source::Scans(_), Some(path)) => Some(load_poses(path)?),
        _ => None,
    };
    let extracted = extract_source(&source, config, poses.as_deref())?;

    let mut db = DescriptorDatabase::new();
    let mut total = Duration::ZERO;
    for (i, e) in extracted.into_iter().enumerate() {
        if !args.quiet {
            eprintln!(
                "[{}] frame {}: {} inputs, {} cells, {:.3} ms",
                i + 1,
                e.signature.frame_id(),
                e.points,
                e.signature.geometric_key.total_cells,
                e.elapsed.as_secs_f64() * 1e3
            );
        }
        total += e.elapsed;
        db.push(e.signature, e.pose)?;
    }
    ensure_parent(&args.output)?;
    db.save(&args.output).map_err(CliError::from)?;
    eprintln!(
        "wrote {} entries to {} (mean extraction {:.3} ms)",
        db.len(),
        args.output.display(),
        total.as_secs_f64() * 1e3 / db.len().max(1) as f64
    );
    Ok(())
}
