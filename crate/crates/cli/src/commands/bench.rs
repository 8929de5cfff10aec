use std::path::PathBuf;

use ndtmc::bench::{synthetic_database, time_each, TimingStats};
use ndtmc::cloud_io::{load_kitti_scan, PointCloud};
use ndtmc::descriptor::extract_from_cloud;
use ndtmc::synth::{rng, SceneSpec};

use super::ensure_parent;
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::inputs::list_scans;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Scan directory. Without it, `--synthetic` scenes are generated.
    scans: Option<PathBuf>,
    /// Number of synthetic scenes when no scan directory is given.
    #[arg(long, default_value_t = 10)]
    synthetic: usize,
    /// Times each scan is extracted and each query run.
    #[arg(short, long, default_value_t = 3)]
    repetitions: usize,
    /// Database sizes to time queries against.
    #[arg(long, value_delimiter = ',', default_value = "100,1000")]
    db_sizes: Vec<usize>,
    /// Also write the report as CSV.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

struct Row {
    stage: &'static str,
    db_size: Option<usize>,
    stats: TimingStats,
}

/// Times extraction per scan, then queries against databases of
/// perturbed copies of the extracted signatures. Runs on one thread.
pub fn run(config: &Config, seed: u64, args: Args) -> CliResult<()> {
    if args.repetitions == 0 {
        return Err(CliError::input("--repetitions must be >= 1"));
    }
    let clouds: Vec<PointCloud> = match &args.scans {
        Some(dir) => list_scans(dir)?
            .iter()
            .map(|s| load_kitti_scan(&s.path).map_err(CliError::from))
            .collect::<CliResult<_>>()?,
        None => {
            if args.synthetic == 0 {
                return Err(CliError::input("--synthetic must be >= 1"));
            }
            (0..args.synthetic as u64)
                .map(|i| SceneSpec::random(&mut rng(seed + 2 * i)).sample(&mut rng(seed + 2 * i + 1)))
                .collect()
        }
    };

    let mut extract_times = Vec::new();
    let mut signatures = Vec::new();
    for _ in 0..args.repetitions {
        let (sigs, times) = time_each(&clouds, |c| {
            extract_from_cloud(c, config.resolution, &config.partition, &config.shape)
        });
        extract_times.extend(times);
        signatures = sigs.into_iter().collect::<Result<Vec<_>, _>>()?;
    }
    let mut rows = vec![Row {
        stage: "extraction",
        db_size: None,
        stats: TimingStats::from_durations(&extract_times).expect("at least one sample"),
    }];

    let params = config.matcher.query_params();
    for &size in &args.db_sizes {
        let db = synthetic_database(&signatures, size, &mut rng(seed ^ size as u64))?;
        let mut times = Vec::new();
        for _ in 0..args.repetitions {
            let (results, t) = time_each(&signatures, |q| db.query(q, &params));
            results.into_iter().collect::<Result<Vec<_>, _>>()?;
            times.extend(t);
        }
        rows.push(Row {
            stage: "query",
            db_size: Some(size),
            stats: TimingStats::from_durations(&times).expect("at least one sample"),
        });
    }

    println!(
        "{:<10} {:>8} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "stage", "db_size", "samples", "mean_ms", "median_ms", "p95_ms", "min_ms", "max_ms"
    );
    for r in &rows {
        let s = &r.stats;
        println!(
            "{:<10} {:>8} {:>8} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            r.stage,
            r.db_size.map_or("-".into(), |n| n.to_string()),
            s.samples,
            s.mean_ms,
            s.median_ms,
            s.p95_ms,
            s.min_ms,
            s.max_ms
        );
    }

    if let Some(path) = &args.output {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "stage", "db_size", "samples", "mean_ms", "median_ms", "p95_ms", "min_ms", "max_ms",
        ])?;
        for r in &rows {
            let s = &r.stats;
            w.write_record([
                r.stage.to_string(),
                r.db_size.map(|n| n.to_string()).unwrap_or_default(),
                s.samples.to_string(),
                s.mean_ms.to_string(),
                s.median_ms.to_string(),
                s.p95_ms.to_string(),
                s.min_ms.to_string(),
                s.max_ms.to_string(),
            ])?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}
