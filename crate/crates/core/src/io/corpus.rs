use std::collections::BTreeMap;
use std::path::Path;

use super::{atomic_write, read_alignments, read_features, write_alignments, write_features};
use crate::training::{TrainingCorpus, Utterance};
use crate::{Error, Result};

pub const FEATURE_DIR: &str = "features";
pub const FEATURE_EXT: &str = "kwsf";
pub const ALIGNMENTS_FILE: &str = "alignments.tsv";
pub const TRANSCRIPTS_FILE: &str = "transcripts.tsv";

/// Writes one split as `features/<id>.kwsf`, `alignments.tsv` and
/// `transcripts.tsv` under `dir`.
pub fn write_split(dir: &Path, corpus: &TrainingCorpus) -> Result<()> {
    let fdir = dir.join(FEATURE_DIR);
    let mut rows = Vec::new();
    let mut transcripts = String::new();
    for u in &corpus.utterances {
        write_features(&fdir.join(format!("{}.{FEATURE_EXT}", u.id)), &u.features)?;
        rows.extend(u.words.iter().map(|w| (u.id.clone(), w.clone())));
        let text: Vec<&str> = u.words.iter().map(|w| w.word.as_str()).collect();
        transcripts.push_str(&format!("{}\t{}\n", u.id, text.join(" ")));
    }
    write_alignments(&dir.join(ALIGNMENTS_FILE), &rows)?;
    atomic_write(&dir.join(TRANSCRIPTS_FILE), transcripts.as_bytes())
}

/// Reads a split written by [`write_split`]. Utterances come in id order;
/// every alignment row must name an utterance with features.
pub fn read_split(dir: &Path) -> Result<TrainingCorpus> {
    let fdir = dir.join(FEATURE_DIR);
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(&fdir).map_err(|e| Error::io(&fdir, e))? {
        let path = entry.map_err(|e| Error::io(&fdir, e))?.path();
        if path.extension().is_some_and(|x| x == FEATURE_EXT) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    let mut words: BTreeMap<String, Vec<_>> = ids.iter().map(|id| (id.clone(), Vec::new())).collect();
    let apath = dir.join(ALIGNMENTS_FILE);
    for (utt, w) in read_alignments(&apath)? {
        words
            .get_mut(&utt)
            .ok_or_else(|| Error::OutsideUtterance {
                id: utt.clone(),
                detail: format!("aligned in {} but has no feature file", apath.display()),
            })?
            .push(w);
    }
    let utterances = ids
        .into_iter()
        .map(|id| {
            let features = read_features(&fdir.join(format!("{id}.{FEATURE_EXT}")))?;
            let words = words.remove(&id).unwrap_or_default();
            Ok(Utterance { id, features, words })
        })
        .collect::<Result<Vec<_>>>()?;
    TrainingCorpus::new(utterances)
}
