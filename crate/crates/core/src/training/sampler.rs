use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Phrase;
use crate::{Error, Result};

/// Batch shape: `batch_phrases` phrase tokens per step, each paired with
/// `utterances_per_phrase` utterances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub batch_phrases: usize,
    pub utterances_per_phrase: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            batch_phrases: 64,
            utterances_per_phrase: 4,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_phrases == 0 || self.utterances_per_phrase == 0 {
            return Err(Error::Config("batch size and utterances per phrase must be positive".into()));
        }
        Ok(())
    }
}

/// One phrase of a batch with the utterances it is scored against. The
/// first utterance always contains the phrase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub phrase: usize,
    pub utterances: Vec<usize>,
}

/// Draws a batch: tokens uniformly from `tokens` (so phrase types are drawn
/// in proportion to their frequency), the token's own utterance as the
/// positive, and the rest uniformly from `pool`.
pub fn sample_batch<R: Rng + ?Sized>(
    phrases: &[Phrase],
    tokens: &[(usize, usize)],
    pool: &[usize],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<Group>> {
    if tokens.is_empty() || pool.is_empty() {
        return Err(Error::Empty("training phrases"));
    }
    Ok((0..cfg.batch_phrases)
        .map(|_| {
            let (p, o) = tokens[rng.gen_range(0..tokens.len())];
            let mut utterances = vec![phrases[p].occurrences[o].utterance];
            for _ in 1..cfg.utterances_per_phrase {
                utterances.push(pool[rng.gen_range(0..pool.len())]);
            }
            Group { phrase: p, utterances }
        })
        .collect())
}
