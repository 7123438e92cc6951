//! Deterministic synthetic corpora: words are rendered symbol by symbol as
//! noisy copies of per-symbol prototype frames, with silence in between,
//! and come with exact word alignments.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::training::{AlignedWord, SymbolInventory, TrainingCorpus, Utterance};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of letters (the word separator is extra).
    pub symbols: usize,
    pub feature_dim: usize,
    /// Frames per rendered symbol, inclusive range.
    pub symbol_frames: (usize, usize),
    pub noise_sigma: f64,
    pub words_per_utterance: (usize, usize),
    pub word_length: (usize, usize),
    /// In-vocabulary word types used in every split.
    pub vocabulary: usize,
    /// Word types that appear only in dev and eval.
    pub oov_words: usize,
    /// Probability that a dev or eval word token is out of vocabulary.
    pub oov_rate: f64,
    pub train_utterances: usize,
    pub dev_utterances: usize,
    pub eval_utterances: usize,
    /// Silence frames before, between and after words, inclusive range.
    pub silence_frames: (usize, usize),
    /// Utterances are padded with silence to at least this many frames.
    pub min_frames: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            symbols: 20,
            feature_dim: 16,
            symbol_frames: (3, 10),
            noise_sigma: 0.3,
            words_per_utterance: (2, 4),
            word_length: (3, 6),
            vocabulary: 50,
            oov_words: 20,
            oov_rate: 0.2,
            train_utterances: 2000,
            dev_utterances: 200,
            eval_utterances: 200,
            silence_frames: (5, 20),
            min_frames: 100,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let ranges = [
            self.symbol_frames,
            self.words_per_utterance,
            self.word_length,
            self.silence_frames,
        ];
        if ranges.iter().any(|&(lo, hi)| lo > hi) {
            return bad("every range needs min <= max");
        }
        if self.symbols == 0 || self.symbols > 26 || self.feature_dim == 0 {
            return bad("symbols must be in 1..=26 and feature_dim positive");
        }
        if self.symbol_frames.0 == 0 || self.words_per_utterance.0 == 0 || self.word_length.0 == 0 {
            return bad("symbol durations, word counts and word lengths must be positive");
        }
        if self.vocabulary < 2 {
            return bad("vocabulary needs at least two words");
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.oov_rate) {
            return bad("noise must be non-negative and oov_rate in [0, 1]");
        }
        let possible: f64 = (self.word_length.0..=self.word_length.1)
            .map(|l| (self.symbols as f64).powi(l as i32))
            .sum();
        if possible < 2.0 * (self.vocabulary + self.oov_words) as f64 {
            return Err(Error::Config(format!(
                "{} symbols at lengths {:?} cannot spell {} distinct words",
                self.symbols,
                self.word_length,
                self.vocabulary + self.oov_words
            )));
        }
        Ok(())
    }

    pub fn letters(&self) -> Vec<char> {
        (b'a'..).take(self.symbols).map(char::from).collect()
    }
}

/// Generated corpus with vocabulary and query lists.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub inventory: SymbolInventory,
    pub vocabulary: Vec<String>,
    pub oov_vocabulary: Vec<String>,
    pub train: TrainingCorpus,
    pub dev: TrainingCorpus,
    pub eval: TrainingCorpus,
    /// `(letters + silence) x feature_dim` prototype frames; silence last.
    pub prototypes: Tensor<f32>,
}

fn random_word<R: Rng>(letters: &[char], len: (usize, usize), rng: &mut R) -> String {
    let n = rng.gen_range(len.0..=len.1);
    (0..n).map(|_| *letters.choose(rng).expect("letters")).collect()
}

/// Splices a prefix of one word onto a suffix of another.
fn recombine<R: Rng>(vocab: &[String], len: (usize, usize), rng: &mut R) -> Option<String> {
    let a: Vec<char> = vocab.choose(rng)?.chars().collect();
    let b: Vec<char> = vocab.choose(rng)?.chars().collect();
    let i = rng.gen_range(1..=a.len());
    let j = rng.gen_range(0..b.len());
    let w: String = a[..i].iter().chain(&b[j..]).collect();
    let n = w.chars().count();
    (n >= len.0 && n <= len.1).then_some(w)
}

/// True when `w` contains, or is contained in, a word already in `seen`.
/// Such a pair would put one word's exact symbol sequence inside the other,
/// so a search for the shorter word would find acoustically genuine matches
/// that the word-level references count as false alarms.
fn nests(w: &str, seen: &BTreeSet<String>) -> bool {
    seen.iter().any(|v| v.contains(w) || w.contains(v.as_str()))
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let letters = cfg.letters();
    let inventory = SymbolInventory::new(&letters)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let protos: Vec<f32> = (0..(cfg.symbols + 1) * cfg.feature_dim)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        })
        .collect();
    let prototypes = Tensor::matrix(cfg.symbols + 1, cfg.feature_dim, protos)?;

    let mut seen = BTreeSet::new();
    let mut vocabulary = Vec::new();
    let mut attempts = 0;
    while vocabulary.len() < cfg.vocabulary {
        attempts += 1;
        if attempts > 1_000_000 {
            return Err(Error::Config("could not draw enough distinct vocabulary words".into()));
        }
        let w = random_word(&letters, cfg.word_length, &mut rng);
        if !nests(&w, &seen) {
            seen.insert(w.clone());
            vocabulary.push(w);
        }
    }
    let mut oov_vocabulary = Vec::new();
    attempts = 0;
    while oov_vocabulary.len() < cfg.oov_words {
        attempts += 1;
        if attempts > 1_000_000 {
            return Err(Error::Config("could not compose enough out-of-vocabulary words".into()));
        }
        if let Some(w) = recombine(&vocabulary, cfg.word_length, &mut rng) {
            if !nests(&w, &seen) {
                seen.insert(w.clone());
                oov_vocabulary.push(w);
            }
        }
    }

    let render = |split: u64, count: usize, oov_rate: f64, prefix: &str| -> Result<TrainingCorpus> {
        let utts = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
                r.set_stream((split << 32) | i as u64 + 1);
                render_utterance(
                    cfg,
                    &format!("{prefix}{i:05}"),
                    &vocabulary,
                    &oov_vocabulary,
                    oov_rate,
                    &prototypes,
                    &mut r,
                )
            })
            .collect();
        TrainingCorpus::new(utts)
    };
    Ok(SynthCorpus {
        train: render(1, cfg.train_utterances, 0.0, "train")?,
        dev: render(2, cfg.dev_utterances, cfg.oov_rate, "dev")?,
        eval: render(3, cfg.eval_utterances, cfg.oov_rate, "eval")?,
        inventory,
        vocabulary,
        oov_vocabulary,
        prototypes,
    })
}

fn render_utterance(
    cfg: &SynthConfig,
    id: &str,
    vocab: &[String],
    oov: &[String],
    oov_rate: f64,
    protos: &Tensor<f32>,
    rng: &mut ChaCha8Rng,
) -> Utterance {
    let silence = cfg.symbols;
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let mut rows: Vec<usize> = Vec::new();
    let mut words = Vec::new();
    let pad = |rows: &mut Vec<usize>, rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(cfg.silence_frames.0..=cfg.silence_frames.1);
        rows.extend(std::iter::repeat(silence).take(n));
    };
    pad(&mut rows, rng);
    let n_words = rng.gen_range(cfg.words_per_utterance.0..=cfg.words_per_utterance.1);
    for k in 0..n_words {
        if k > 0 {
            pad(&mut rows, rng);
        }
        let w = if !oov.is_empty() && rng.gen_bool(oov_rate) {
            oov.choose(rng)
        } else {
            vocab.choose(rng)
        }
        .expect("nonempty vocabulary");
        let start = rows.len();
        for c in w.bytes() {
            let s = (c - b'a') as usize;
            let d = rng.gen_range(cfg.symbol_frames.0..=cfg.symbol_frames.1);
            rows.extend(std::iter::repeat(s).take(d));
        }
        words.push(AlignedWord {
            word: w.clone(),
            start_ms: start as u64 * 10,
            end_ms: rows.len() as u64 * 10,
        });
    }
    pad(&mut rows, rng);
    if rows.len() < cfg.min_frames {
        rows.resize(cfg.min_frames, silence);
    }
    let dim = cfg.feature_dim;
    let mut data = Vec::with_capacity(rows.len() * dim);
    for &s in &rows {
        for &p in protos.row(s) {
            let e = if cfg.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            data.push((p as f64 + e) as f32);
        }
    }
    Utterance {
        id: id.to_string(),
        features: Tensor::matrix(rows.len(), dim, data).expect("sized"),
        words,
    }
}

/// Query lists for evaluation: up to `n_iv` training words and up to
/// `n_oov` composed words, each occurring at least once in `target`.
/// OOV queries are checked against every training transcript.
pub fn split_queries<R: Rng + ?Sized>(
    corpus: &SynthCorpus,
    target: &TrainingCorpus,
    n_iv: usize,
    n_oov: usize,
    rng: &mut R,
) -> (Vec<String>, Vec<String>) {
    let trained: BTreeSet<&str> = corpus
        .train
        .utterances
        .iter()
        .flat_map(|u| u.words.iter().map(|w| w.word.as_str()))
        .collect();
    let present: BTreeSet<&str> = target
        .utterances
        .iter()
        .flat_map(|u| u.words.iter().map(|w| w.word.as_str()))
        .collect();
    let mut iv: Vec<String> = corpus
        .vocabulary
        .iter()
        .filter(|w| trained.contains(w.as_str()) && present.contains(w.as_str()))
        .cloned()
        .collect();
    let mut oov: Vec<String> = corpus
        .oov_vocabulary
        .iter()
        .filter(|w| !trained.contains(w.as_str()) && present.contains(w.as_str()))
        .cloned()
        .collect();
    iv.shuffle(rng);
    oov.shuffle(rng);
    iv.truncate(n_iv);
    oov.truncate(n_oov);
    iv.sort();
    oov.sort();
    (iv, oov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_utterances: 30,
            dev_utterances: 10,
            eval_utterances: 10,
            vocabulary: 12,
            oov_words: 5,
            oov_rate: 0.3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
    }

    #[test]
    fn noiseless_frames_are_prototypes() {
        let c = generate(&SynthConfig {
            noise_sigma: 0.0,
            ..small()
        })
        .unwrap();
        for u in &c.train.utterances {
            for r in 0..u.frames() {
                let row = u.features.row(r);
                assert!((0..c.prototypes.rows()).any(|p| c.prototypes.row(p) == row));
            }
        }
    }

    #[test]
    fn alignments_cover_words() {
        let c = generate(&small()).unwrap();
        for u in c.train.utterances.iter().chain(&c.dev.utterances) {
            assert!(u.frames() >= 100);
            let word_frames: u64 = u.words.iter().map(|w| (w.end_ms - w.start_ms) / 10).sum();
            let letters: usize = u.words.iter().map(|w| w.word.len()).sum();
            assert!(word_frames as usize >= letters * 3 && word_frames as usize <= letters * 10);
        }
    }

    #[test]
    fn oov_never_in_training() {
        let c = generate(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (iv, oov) = split_queries(&c, &c.eval, 10, 10, &mut rng);
        assert!(!iv.is_empty());
        for q in &oov {
            assert!(c.train.utterances.iter().all(|u| u.words.iter().all(|w| &w.word != q)));
        }
        let (_, none) = split_queries(&c, &c.eval, 10, 0, &mut rng);
        assert!(none.is_empty());
    }

    #[test]
    fn no_word_contains_another() {
        let c = generate(&SynthConfig::default()).unwrap();
        let all: Vec<&String> = c.vocabulary.iter().chain(&c.oov_vocabulary).collect();
        for a in &all {
            for b in &all {
                assert!(a == b || !a.contains(b.as_str()), "{a} contains {b}");
            }
        }
    }

    #[test]
    fn tiny_inventory_is_rejected() {
        let cfg = SynthConfig {
            symbols: 2,
            word_length: (2, 2),
            ..small()
        };
        assert!(generate(&cfg).is_err());
    }
}
