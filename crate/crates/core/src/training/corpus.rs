use std::collections::BTreeMap;

use crate::encoders::FRAME_STEP_MS;
use crate::nn::Tensor;
use crate::{Error, Result};

/// One word token with its time span in milliseconds, `[start_ms, end_ms)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignedWord {
    pub word: String,
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `frames x feature_dim`, one row per 10 ms.
    pub features: Tensor<f32>,
    /// Word alignment, time-ordered and non-overlapping.
    pub words: Vec<AlignedWord>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn duration_ms(&self) -> u64 {
        self.frames() as u64 * FRAME_STEP_MS as u64
    }
}

/// Utterances with features and word alignments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCorpus {
    pub utterances: Vec<Utterance>,
}

impl TrainingCorpus {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let c = Self { utterances };
        c.validate()?;
        Ok(c)
    }

    /// Checks that every span is non-empty, inside its utterance, and that
    /// spans are ordered without overlap.
    pub fn validate(&self) -> Result<()> {
        for u in &self.utterances {
            let mut prev_end = 0;
            for w in &u.words {
                let bad = |detail: String| Error::OutsideUtterance {
                    id: u.id.clone(),
                    detail,
                };
                if w.start_ms >= w.end_ms {
                    return Err(bad(format!("word {:?} has an empty span", w.word)));
                }
                if w.end_ms > u.duration_ms() {
                    return Err(bad(format!(
                        "word {:?} ends at {} ms past {} ms",
                        w.word,
                        w.end_ms,
                        u.duration_ms()
                    )));
                }
                if w.start_ms < prev_end {
                    return Err(bad(format!("word {:?} overlaps its predecessor", w.word)));
                }
                prev_end = w.end_ms;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Word type to `(utterance index, word position)` occurrences.
    pub fn word_index(&self) -> BTreeMap<&str, Vec<(usize, usize)>> {
        let mut idx: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
        for (u, utt) in self.utterances.iter().enumerate() {
            for (p, w) in utt.words.iter().enumerate() {
                idx.entry(w.word.as_str()).or_default().push((u, p));
            }
        }
        idx
    }

    /// Total audio duration in seconds.
    pub fn duration_s(&self) -> f64 {
        self.utterances.iter().map(|u| u.duration_ms()).sum::<u64>() as f64 / 1000.0
    }
}

/// Query symbol inventory. Index 0 is the word separator `' '`, so
/// multi-word phrases can be spelled as one symbol sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolInventory {
    symbols: Vec<char>,
}

impl SymbolInventory {
    pub const SEPARATOR: char = ' ';

    /// Builds an inventory from the letters, which must be distinct and not
    /// include the separator.
    pub fn new(letters: &[char]) -> Result<Self> {
        let mut symbols = vec![Self::SEPARATOR];
        for &c in letters {
            if symbols.contains(&c) {
                return Err(Error::Config(format!("symbol {c:?} listed twice")));
            }
            symbols.push(c);
        }
        Ok(Self { symbols })
    }

    /// Every distinct letter appearing in `words`, sorted.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut letters: Vec<char> = words.into_iter().flat_map(|w| w.chars()).collect();
        letters.sort_unstable();
        letters.dedup();
        letters.retain(|&c| c != Self::SEPARATOR);
        Self::new(&letters)
    }

    /// Number of symbols including the separator.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn letters(&self) -> &[char] {
        &self.symbols[1..]
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        if text.is_empty() {
            return Err(Error::Empty("query"));
        }
        text.chars()
            .enumerate()
            .map(|(position, symbol)| {
                self.symbols
                    .iter()
                    .position(|&c| c == symbol)
                    .ok_or(Error::UnknownSymbol { position, symbol })
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.symbols[i]).collect()
    }

    /// Letters of `text`, not counting separators.
    pub fn letter_count(text: &str) -> usize {
        text.chars().filter(|&c| c != Self::SEPARATOR).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(words: &[(&str, u64, u64)], frames: usize) -> Utterance {
        Utterance {
            id: "u".into(),
            features: Tensor::zeros(&[frames, 2]),
            words: words
                .iter()
                .map(|&(w, s, e)| AlignedWord {
                    word: w.into(),
                    start_ms: s,
                    end_ms: e,
                })
                .collect(),
        }
    }

    #[test]
    fn validation_catches_bad_spans() {
        assert!(TrainingCorpus::new(vec![utt(&[("a", 0, 50), ("b", 50, 100)], 10)]).is_ok());
        assert!(TrainingCorpus::new(vec![utt(&[("a", 0, 120)], 10)]).is_err());
        assert!(TrainingCorpus::new(vec![utt(&[("a", 0, 60), ("b", 50, 90)], 10)]).is_err());
        assert!(TrainingCorpus::new(vec![utt(&[("a", 30, 30)], 10)]).is_err());
    }

    #[test]
    fn inventory_roundtrip_and_errors() {
        let inv = SymbolInventory::from_words(["cab", "bad"]).unwrap();
        assert_eq!(inv.len(), 5);
        let ids = inv.encode("ab cd").unwrap();
        assert_eq!(ids, vec![1, 2, 0, 3, 4]);
        assert_eq!(inv.decode(&ids), "ab cd");
        assert!(matches!(
            inv.encode("abz"),
            Err(Error::UnknownSymbol { position: 2, symbol: 'z' })
        ));
        assert!(inv.encode("").is_err());
        assert_eq!(SymbolInventory::letter_count("ab cd"), 4);
    }
}
