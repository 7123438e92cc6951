use super::{AlignedWord, Phrase};
use crate::encoders::FRAME_STEP_MS;

/// Full-rate frames `[first, last]` touched by the span `[start_ms, end_ms)`.
pub fn span_frames(start_ms: u64, end_ms: u64) -> (usize, usize) {
    let step = FRAME_STEP_MS as u64;
    let first = start_ms / step;
    let last = end_ms.div_ceil(step).max(first + 1) - 1;
    (first as usize, last as usize)
}

/// Frame labels for `words` (a phrase) in an utterance with `frames` input
/// frames and total downsampling `factor`.
///
/// A full-rate frame is 1 when it lies inside any run of consecutive aligned
/// words that spells the phrase. A downsampled frame is 1 when any
/// full-rate frame of its window is.
pub fn make_labels(words: &[String], alignment: &[AlignedWord], frames: usize, factor: usize) -> Vec<f32> {
    let factor = factor.max(1);
    let out = frames / factor;
    let mut y = vec![0.0f32; out];
    let n = words.len();
    if n == 0 || alignment.len() < n {
        return y;
    }
    for w in alignment.windows(n) {
        if w.iter().zip(words).all(|(a, b)| a.word == *b) {
            let (first, last) = span_frames(w[0].start_ms, w[n - 1].end_ms);
            let last = last.min(frames.saturating_sub(1));
            for k in first / factor..=(last / factor).min(out.saturating_sub(1)) {
                if k < out {
                    y[k] = 1.0;
                }
            }
        }
    }
    y
}

/// Labels for a sampled training phrase.
pub fn phrase_labels(phrase: &Phrase, alignment: &[AlignedWord], frames: usize, factor: usize) -> Vec<f32> {
    make_labels(&phrase.words, alignment, frames, factor)
}
