//! Metrics: balanced segment trials with accuracy and AUC, hit alignment,
//! term-weighted value and keyword-specific score normalization.

mod classification;
mod kst;
mod twv;

pub use classification::{accuracy_auc, make_classification_trials, Trial, SEGMENT_HOP_MS, SEGMENT_MS};
pub use kst::{kst_normalize, kst_threshold};
pub use twv::{
    align_hits, mtwv_sweep, twv, Alignment, DetPoint, LabeledHit, QueryTwv, Sweep, TwvConfig,
    TwvReport,
};

use std::collections::BTreeMap;

use crate::training::TrainingCorpus;

/// One true occurrence of a query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Occurrence {
    pub query: String,
    pub utterance: String,
    pub start_ms: u64,
    pub end_ms: u64,
}

/// Reference occurrences for a set of queries over `duration_s` seconds of
/// audio.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct References {
    pub occurrences: Vec<Occurrence>,
    pub duration_s: f64,
    /// Queries that are searched for; those without occurrences are
    /// reported but left out of TWV averages.
    pub queries: Vec<String>,
}

impl References {
    /// Builds references; the query set is `queries` plus every query with
    /// an occurrence.
    pub fn new(occurrences: Vec<Occurrence>, duration_s: f64, queries: &[String]) -> Self {
        let mut q: Vec<String> = queries.to_vec();
        q.extend(occurrences.iter().map(|o| o.query.clone()));
        q.sort();
        q.dedup();
        Self {
            occurrences,
            duration_s,
            queries: q,
        }
    }

    pub fn ntrue(&self) -> BTreeMap<&str, usize> {
        let mut m: BTreeMap<&str, usize> = self.queries.iter().map(|q| (q.as_str(), 0)).collect();
        for o in &self.occurrences {
            *m.entry(o.query.as_str()).or_default() += 1;
        }
        m
    }
}

/// Every match of each query in the aligned transcripts. A multi-word query
/// (words separated by single spaces) matches consecutive aligned words and
/// spans from the first word's start to the last word's end.
pub fn find_occurrences(corpus: &TrainingCorpus, queries: &[String]) -> Vec<Occurrence> {
    let mut out = Vec::new();
    for q in queries {
        let words: Vec<&str> = q.split(' ').collect();
        for u in &corpus.utterances {
            for w in u.words.windows(words.len()) {
                if w.iter().zip(&words).all(|(a, b)| a.word == *b) {
                    out.push(Occurrence {
                        query: q.clone(),
                        utterance: u.id.clone(),
                        start_ms: w[0].start_ms,
                        end_ms: w[w.len() - 1].end_ms,
                    });
                }
            }
        }
    }
    out
}
