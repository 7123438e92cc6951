use serde::{Deserialize, Serialize};

use super::Hypothesis;
use crate::{Error, Result};

/// Segment score: the highest frame probability.
pub fn classify_segment(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::Empty("segment"));
    }
    Ok(z.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// How an island's frame probabilities become one score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Median,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Frames with probability below this are zeroed.
    pub threshold: f64,
    /// Islands shorter than this many milliseconds per query letter are
    /// dropped.
    pub min_ms_per_letter: f64,
    pub aggregator: Aggregator,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_ms_per_letter: 20.0,
            aggregator: Aggregator::Median,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("decode threshold must lie in (0, 1)".into()));
        }
        if !(self.min_ms_per_letter >= 0.0) {
            return Err(Error::Config("minimum duration per letter must be non-negative".into()));
        }
        Ok(())
    }
}

/// Median; even lengths average the two central values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// A maximal run of frames `[first, last]` at or above the threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Island {
    pub first: usize,
    pub last: usize,
    pub score: f64,
}

/// Maximal above-threshold runs that last at least
/// `min_ms_per_letter * letters` milliseconds at `step_ms` per frame.
pub fn decode_islands(z: &[f64], cfg: &DecodeConfig, letters: usize, step_ms: u32) -> Vec<Island> {
    let min_ms = cfg.min_ms_per_letter * letters as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < z.len() {
        if z[i] < cfg.threshold {
            i += 1;
            continue;
        }
        let first = i;
        while i < z.len() && z[i] >= cfg.threshold {
            i += 1;
        }
        let run = &z[first..i];
        if (run.len() as f64) * step_ms as f64 >= min_ms {
            let score = match cfg.aggregator {
                Aggregator::Median => median(run),
                Aggregator::Mean => run.iter().sum::<f64>() / run.len() as f64,
                Aggregator::Max => run.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            out.push(Island {
                first,
                last: i - 1,
                score,
            });
        }
    }
    out
}

/// Decoded hits for one query in one utterance. Island `[a, b]` spans
/// `[a * step, (b + 1) * step)` milliseconds.
pub fn decode_hits(
    query: &str,
    utterance: &str,
    z: &[f64],
    cfg: &DecodeConfig,
    letters: usize,
    step_ms: u32,
) -> Vec<Hypothesis> {
    let step = step_ms as u64;
    decode_islands(z, cfg, letters, step_ms)
        .into_iter()
        .map(|is| Hypothesis {
            query: query.to_string(),
            utterance: utterance.to_string(),
            start_ms: is.first as u64 * step,
            end_ms: (is.last as u64 + 1) * step,
            score: is.score,
        })
        .collect()
}
