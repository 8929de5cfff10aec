pub mod bench;
pub mod evaluate;
pub mod extract;
pub mod index;
pub mod query;
pub mod submap;
pub mod synth;

use std::fs;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// Creates the parent directory of an output file if needed.
pub(crate) fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}
