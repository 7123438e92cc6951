use std::collections::BTreeMap;

use crate::search::Hypothesis;
use crate::{Error, Result};

/// Keyword threshold `beta * N / (T + (beta - 1) * N)` for an expected
/// count `N` over `T` seconds, kept inside (0, 1).
pub fn kst_threshold(expected: f64, duration_s: f64, beta: f64) -> f64 {
    let thr = beta * expected / (duration_s + (beta - 1.0) * expected);
    thr.clamp(1e-12, 1.0 - 1e-12)
}

/// Per-query normalization: the query's expected count is the sum of its
/// scores, and scores are remapped so that its threshold lands on 0.5.
/// The map is increasing, so within-query order never changes.
pub fn kst_normalize(hyps: &[Hypothesis], duration_s: f64, beta: f64) -> Result<Vec<Hypothesis>> {
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    for h in hyps {
        if !(0.0..=1.0).contains(&h.score) {
            return Err(Error::ScoreRange {
                query: h.query.clone(),
                utterance: h.utterance.clone(),
                score: h.score,
            });
        }
        *sums.entry(h.query.as_str()).or_default() += h.score;
    }
    let thr: BTreeMap<&str, f64> = sums
        .into_iter()
        .map(|(q, n)| (q, kst_threshold(n, duration_s, beta)))
        .collect();
    Ok(hyps
        .iter()
        .map(|h| {
            let t = thr[h.query.as_str()];
            let s = h.score;
            let a = s * (1.0 - t);
            Hypothesis {
                score: a / (a + (1.0 - s) * t),
                ..h.clone()
            }
        })
        .collect())
}
