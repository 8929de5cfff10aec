use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndtmc::evaluation::{
    extended_precision, f1_max, ground_truth, ground_truth_between, pr_curve, threshold_sweep, GroundTruth, PrCurve,
    QueryOutcome,
};
use serde::Deserialize;

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::inputs::load_poses;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Matches CSV from `ndtmc query`.
    matches: PathBuf,
    /// Query poses (KITTI format). With no `--db-poses`, queries and
    /// database are frames of this one sequence.
    #[arg(long)]
    poses: Option<PathBuf>,
    /// Database poses for cross-session evaluation.
    #[arg(long)]
    db_poses: Option<PathBuf>,
    /// Directory for `pr.csv`, `summary.csv` and `gt_pairs.csv`.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Name written in the summary's `sequence` column.
    #[arg(long, default_value = "sequence")]
    sequence: String,
}

#[derive(Debug, Deserialize)]
struct MatchRow {
    query_id: u64,
    match_id: Option<u64>,
    distance: Option<f64>,
}

pub fn read_matches(path: &Path) -> CliResult<Vec<QueryOutcome>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::from(e).context(path.display()))?;
    let mut out = Vec::new();
    for row in r.deserialize::<MatchRow>() {
        let row = row.map_err(|e| CliError::from(e).context(path.display()))?;
        let best = match (row.match_id, row.distance) {
            (Some(id), Some(d)) => Some((id, d)),
            (None, None) => None,
            _ => {
                return Err(CliError::format(format!(
                    "{}: query {} has only one of match_id and distance",
                    path.display(),
                    row.query_id
                )))
            }
        };
        out.push(QueryOutcome {
            query_id: row.query_id,
            best,
        });
    }
    Ok(out)
}

/// Scores of one evaluation run.
#[derive(Debug)]
pub struct Report {
    pub curve: PrCurve,
    pub f1_max: Option<f64>,
    pub ep: Option<f64>,
    pub positive_queries: usize,
    /// Ground-truth pairs restricted to the evaluated queries.
    pub pairs: Vec<(u64, u64)>,
}

pub fn evaluate(outcomes: &[QueryOutcome], gt: &GroundTruth) -> CliResult<Report> {
    let curve = pr_curve(outcomes, gt, &threshold_sweep(outcomes))?;
    let queries: BTreeSet<u64> = outcomes.iter().map(|o| o.query_id).collect();
    let mut positive_queries = 0;
    for q in &queries {
        positive_queries += usize::from(!gt.positives(*q)?.is_empty());
    }
    Ok(Report {
        f1_max: f1_max(&curve),
        ep: extended_precision(&curve),
        curve,
        positive_queries,
        pairs: gt.pairs().filter(|(q, _)| queries.contains(q)).collect(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn run(config: &Config, args: Args) -> CliResult<()> {
    let poses_path = args
        .poses
        .as_ref()
        .or(config.paths.poses.as_ref())
        .ok_or_else(|| CliError::input("--poses is required (or set paths.poses)"))?;
    let query_poses = load_poses(poses_path)?;
    let gt = match &args.db_poses {
        Some(db) => ground_truth_between(&query_poses, &load_poses(db)?, &config.ground_truth)?,
        None => ground_truth(&query_poses, &config.ground_truth)?,
    };
    let outcomes = read_matches(&args.matches)?;
    let report = evaluate(&outcomes, &gt).map_err(|e| e.context(args.matches.display()))?;

    let dir = args
        .output_dir
        .or_else(|| config.paths.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let pr_path = dir.join("pr.csv");
    let mut w = csv::Writer::from_path(&pr_path)?;
    w.write_record(["threshold", "precision", "recall", "tp", "fp", "fn"])?;
    for r in &report.curve.rows {
        w.write_record([
            r.threshold.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.tp.to_string(),
            r.fp.to_string(),
            r.fn_.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&pr_path, e))?;

    let summary_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record(["sequence", "f1_max", "ep", "queries", "gt_positive_queries"])?;
    w.write_record([
        args.sequence.clone(),
        fmt_opt(report.f1_max),
        fmt_opt(report.ep),
        report.curve.queries.to_string(),
        report.positive_queries.to_string(),
    ])?;
    w.flush().map_err(|e| CliError::io(&summary_path, e))?;

    let pairs_path = dir.join("gt_pairs.csv");
    let mut w = csv::Writer::from_path(&pairs_path)?;
    w.write_record(["query_id", "positive_id"])?;
    for (q, p) in &report.pairs {
        w.write_record([q.to_string(), p.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&pairs_path, e))?;

    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.6}"));
    println!("queries: {}", report.curve.queries);
    println!("positive queries: {}", report.positive_queries);
    println!("F1_max: {}", show(report.f1_max));
    println!("EP: {}", show(report.ep));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(q: u64, best: Option<(u64, f64)>) -> QueryOutcome {
        QueryOutcome { query_id: q, best }
    }

    #[test]
    fn no_positives_leaves_scores_undefined() {
        let gt = GroundTruth::new([0, 1], [0, 1]);
        let r = evaluate(&[outcome(1, Some((0, 0.2)))], &gt).unwrap();
        assert_eq!(r.positive_queries, 0);
        assert_eq!(r.f1_max, None);
        assert_eq!(r.ep, None);
    }

    #[test]
    fn unknown_query_is_reported_by_id() {
        let gt = GroundTruth::new([0, 1], [0, 1]);
        let e = evaluate(&[outcome(7, None)], &gt).unwrap_err();
        assert!(e.message.contains('7'), "{}", e.message);
    }

    #[test]
    fn pairs_are_limited_to_evaluated_queries() {
        let mut gt = GroundTruth::new([0, 1, 2], [0, 1, 2]);
        gt.insert(2, 0);
        gt.insert(1, 0);
        let r = evaluate(&[outcome(2, Some((0, 0.1)))], &gt).unwrap();
        assert_eq!(r.pairs, vec![(2, 0)]);
        assert_eq!(r.f1_max, Some(1.0));
    }
}
