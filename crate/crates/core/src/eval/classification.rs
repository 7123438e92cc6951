use std::collections::BTreeMap;

use rand::Rng;

use super::Occurrence;
use crate::{Error, Result};

pub const SEGMENT_MS: u64 = 1000;
pub const SEGMENT_HOP_MS: u64 = 500;

/// A one-second segment paired with a query and whether the query occurs
/// in it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub query: String,
    pub utterance: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub positive: bool,
}

fn segments(duration_ms: u64) -> impl Iterator<Item = u64> {
    (0..)
        .map(|k| k * SEGMENT_HOP_MS)
        .take_while(move |s| s + SEGMENT_MS <= duration_ms)
}

fn overlaps(a: (u64, u64), b: (u64, u64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Balanced trials: every half-overlapping one-second segment that touches
/// an occurrence of a query is a positive, and each positive is paired with
/// a uniformly drawn segment (any utterance) that does not touch one.
pub fn make_classification_trials<R: Rng + ?Sized>(
    utterances: &[(String, u64)],
    occurrences: &[Occurrence],
    queries: &[String],
    rng: &mut R,
) -> Vec<Trial> {
    let mut by_query: BTreeMap<&str, Vec<&Occurrence>> = BTreeMap::new();
    for o in occurrences {
        by_query.entry(o.query.as_str()).or_default().push(o);
    }
    let all: Vec<(usize, u64)> = utterances
        .iter()
        .enumerate()
        .flat_map(|(u, (_, d))| segments(*d).map(move |s| (u, s)))
        .collect();
    let mut trials = Vec::new();
    for q in queries {
        let Some(occ) = by_query.get(q.as_str()) else {
            continue;
        };
        let touches = |u: usize, s: u64| {
            occ.iter().any(|o| {
                o.utterance == utterances[u].0 && overlaps((s, s + SEGMENT_MS), (o.start_ms, o.end_ms))
            })
        };
        let negatives: Vec<(usize, u64)> = all.iter().copied().filter(|&(u, s)| !touches(u, s)).collect();
        if negatives.is_empty() {
            continue;
        }
        for &(u, s) in &all {
            if !touches(u, s) {
                continue;
            }
            let (nu, ns) = negatives[rng.gen_range(0..negatives.len())];
            for (uu, ss, positive) in [(u, s, true), (nu, ns, false)] {
                trials.push(Trial {
                    query: q.clone(),
                    utterance: utterances[uu].0.clone(),
                    start_ms: ss,
                    end_ms: ss + SEGMENT_MS,
                    positive,
                });
            }
        }
    }
    trials
}

/// Accuracy at `threshold` (score >= threshold predicts positive) and AUC
/// from the rank statistic, ties counting one half.
pub fn accuracy_auc(labels: &[bool], scores: &[f64], threshold: f64) -> Result<(f64, f64)> {
    if labels.is_empty() {
        return Err(Error::Empty("trial set"));
    }
    if labels.len() != scores.len() {
        return Err(Error::shape(
            "accuracy_auc",
            format!("{} trials vs {} scores", labels.len(), scores.len()),
        ));
    }
    let correct = labels
        .iter()
        .zip(scores)
        .filter(|(&l, &s)| (s >= threshold) == l)
        .count();
    let accuracy = correct as f64 / labels.len() as f64;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::Empty("positive or negative trials"));
    }
    let rank_sum: f64 = labels.iter().zip(&ranks).filter(|(&l, _)| l).map(|(_, r)| r).sum();
    let auc = (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
    Ok((accuracy, auc))
}
