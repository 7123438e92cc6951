//! File formats: feature archives, corpus splits, tab-separated records,
//! atomic writes.

pub(crate) mod binary;
mod corpus;
mod features;
mod tsv;

use std::io::Write;
use std::path::Path;

pub use corpus::{read_split, write_split, ALIGNMENTS_FILE, FEATURE_DIR, FEATURE_EXT, TRANSCRIPTS_FILE};
pub use features::{decode_features, encode_features, read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use tsv::{
    format_hypotheses, read_alignments, read_hypotheses, read_queries, read_references, read_trials, write_alignments,
    write_hypotheses, write_queries, write_references, write_trials, TsvLines,
};

use crate::{Error, Result};

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place, creating parent directories as needed.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
