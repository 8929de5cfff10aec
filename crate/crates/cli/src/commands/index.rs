use std::collections::BTreeSet;
use std::path::PathBuf;

use ndtmc::matcher::DescriptorDatabase;

use super::ensure_parent;
use crate::error::{CliError, CliResult};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Databases to concatenate, in order.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output database.
    #[arg(short, long)]
    output: PathBuf,
}

/// Concatenates databases, checking shapes agree and frame ids are unique.
pub fn run(args: Args) -> CliResult<()> {
    let mut out = DescriptorDatabase::new();
    let mut ids = BTreeSet::new();
    for path in &args.inputs {
        let db = DescriptorDatabase::load(path).map_err(|e| CliError::from(e).context(path.display()))?;
        for e in db.entries() {
            if !ids.insert(e.frame_id()) {
                return Err(CliError::input(format!(
                    "{}: frame id {} already present",
                    path.display(),
                    e.frame_id()
                )));
            }
            out.push(e.signature.clone(), e.pose.clone())
                .map_err(|err| CliError::from(err).context(path.display()))?;
        }
    }
    if out.is_empty() {
        return Err(CliError::input("all input databases are empty"));
    }
    // Building the index checks the keys are usable.
    out.build_index()?;
    ensure_parent(&args.output)?;
    out.save(&args.output)?;
    eprintln!("wrote {} entries to {}", out.len(), args.output.display());
    Ok(())
}
