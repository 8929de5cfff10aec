use std::path::PathBuf;

use ndtmc::matcher::DescriptorDatabase;

use super::ensure_parent;
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::inputs::{query_signatures, Source};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Database to search.
    database: PathBuf,
    /// Queries: a scan directory, places file or another database.
    queries: PathBuf,
    /// Output matches CSV.
    #[arg(short, long)]
    output: PathBuf,
    /// Skip candidates within this many frames of the query.
    #[arg(long)]
    exclusion_gap: Option<u64>,
    /// Only match against earlier frames.
    #[arg(long)]
    past_only: bool,
    /// Score every column shift.
    #[arg(long)]
    full_search: bool,
}

/// Writes `query_id,match_id,shift,distance,accepted`, one row per query.
/// Queries with no admissible candidate get empty match fields.
pub fn run(config: &Config, args: Args) -> CliResult<()> {
    let mut db = DescriptorDatabase::load(&args.database)
        .map_err(|e| CliError::from(e).context(args.database.display()))?;
    db.build_index()
        .map_err(|e| CliError::from(e).context(args.database.display()))?;

    let mut matcher = config.matcher;
    if let Some(gap) = args.exclusion_gap {
        matcher.exclusion_gap = gap;
    }
    matcher.past_only |= args.past_only;
    matcher.full_search |= args.full_search;
    let params = matcher.query_params();

    let queries = query_signatures(&Source::detect(&args.queries)?, config)?;
    let results = db.query_batch(&queries, &params);

    ensure_parent(&args.output)?;
    let mut w = csv::Writer::from_path(&args.output)?;
    w.write_record(["query_id", "match_id", "shift", "distance", "accepted"])?;
    let mut accepted = 0usize;
    for (q, r) in queries.iter().zip(results) {
        let id = q.frame_id().to_string();
        match r? {
            Some(m) => {
                accepted += usize::from(m.accepted);
                w.write_record([
                    id,
                    m.candidate_id.to_string(),
                    m.shift.to_string(),
                    m.distance.to_string(),
                    m.accepted.to_string(),
                ])?;
            }
            None => w.write_record([id, String::new(), String::new(), String::new(), "false".into()])?,
        }
    }
    w.flush().map_err(|e| CliError::io(&args.output, e))?;
    eprintln!(
        "{} queries, {} accepted at threshold {}",
        queries.len(),
        accepted,
        params.threshold
    );
    Ok(())
}
