use std::collections::BTreeMap;

use super::TrainingCorpus;

/// Where one phrase token sits: utterance index and its time span.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub utterance: usize,
    pub start_ms: u64,
    pub end_ms: u64,
}

/// A run of 1 to 3 consecutive aligned words and every place it occurs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Phrase {
    pub words: Vec<String>,
    pub occurrences: Vec<Span>,
}

impl Phrase {
    /// Words joined by the separator symbol.
    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

/// All n-grams of consecutive words up to `max_order`, grouped by type.
/// Each occurrence is a separate token; types come out sorted by text.
pub fn extract_phrases(corpus: &TrainingCorpus, max_order: usize) -> Vec<Phrase> {
    let mut by_type: BTreeMap<Vec<&str>, Vec<Span>> = BTreeMap::new();
    for (u, utt) in corpus.utterances.iter().enumerate() {
        let words = &utt.words;
        for n in 1..=max_order {
            for w in words.windows(n) {
                by_type
                    .entry(w.iter().map(|x| x.word.as_str()).collect())
                    .or_default()
                    .push(Span {
                        utterance: u,
                        start_ms: w[0].start_ms,
                        end_ms: w[n - 1].end_ms,
                    });
            }
        }
    }
    by_type
        .into_iter()
        .map(|(words, occurrences)| Phrase {
            words: words.into_iter().map(String::from).collect(),
            occurrences,
        })
        .collect()
}

/// Flattened `(phrase, occurrence)` token list for uniform token sampling.
pub fn phrase_tokens(phrases: &[Phrase]) -> Vec<(usize, usize)> {
    phrases
        .iter()
        .enumerate()
        .flat_map(|(p, ph)| (0..ph.occurrences.len()).map(move |o| (p, o)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::training::{AlignedWord, Utterance};

    pub(crate) fn corpus(texts: &[&str]) -> TrainingCorpus {
        let utterances = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let words: Vec<AlignedWord> = t
                    .split_whitespace()
                    .enumerate()
                    .map(|(k, w)| AlignedWord {
                        word: w.into(),
                        start_ms: 100 * k as u64,
                        end_ms: 100 * k as u64 + 80,
                    })
                    .collect();
                Utterance {
                    id: format!("u{i}"),
                    features: Tensor::zeros(&[10 * words.len().max(1) + 10, 2]),
                    words,
                }
            })
            .collect();
        TrainingCorpus::new(utterances).unwrap()
    }

    #[test]
    fn enumerates_ngrams() {
        let p = extract_phrases(&corpus(&["a b c"]), 3);
        let texts: Vec<String> = p.iter().map(Phrase::text).collect();
        assert_eq!(texts, ["a", "a b", "a b c", "b", "b c", "c"]);
        assert_eq!(phrase_tokens(&p).len(), 6);
        let abc = &p[2];
        assert_eq!((abc.occurrences[0].start_ms, abc.occurrences[0].end_ms), (0, 280));
    }

    #[test]
    fn single_word_and_repeats() {
        assert_eq!(extract_phrases(&corpus(&["x"]), 3).len(), 1);
        let p = extract_phrases(&corpus(&["a b a b"]), 3);
        let ab = p.iter().find(|p| p.text() == "a b").unwrap();
        assert_eq!(ab.occurrences.len(), 2);
    }
}
