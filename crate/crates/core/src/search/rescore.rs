use super::Hypothesis;
use crate::{Error, Result};

/// Downsampled frames `[first, last]` covered by `[start_ms, end_ms)`,
/// never empty, clamped to the last of `frames` rows.
pub fn frame_interval(start_ms: u64, end_ms: u64, step_ms: u32, frames: usize) -> Option<(usize, usize)> {
    let step = step_ms as u64;
    let first = (start_ms / step) as usize;
    if first >= frames {
        return None;
    }
    let last = (end_ms.div_ceil(step) as usize).saturating_sub(1).max(first);
    Some((first, last.min(frames - 1)))
}

/// Replaces each baseline score `p` by `gamma * p + mean(z)` over the
/// hypothesis's frames. `probs(query, utterance)` supplies the frame
/// probabilities and the frame step. Order and spans are unchanged.
pub fn rescore<'z>(
    baseline: &[Hypothesis],
    mut probs: impl FnMut(&str, &str) -> Result<(&'z [f64], u32)>,
    gamma: f64,
) -> Result<Vec<Hypothesis>> {
    baseline
        .iter()
        .map(|h| {
            let (z, step) = probs(&h.query, &h.utterance)?;
            let (a, b) = frame_interval(h.start_ms, h.end_ms, step, z.len()).ok_or_else(|| {
                Error::OutsideUtterance {
                    id: h.utterance.clone(),
                    detail: format!(
                        "hypothesis {}-{} ms for {} starts after the last frame",
                        h.start_ms, h.end_ms, h.query
                    ),
                }
            })?;
            let mean = z[a..=b].iter().sum::<f64>() / (b - a + 1) as f64;
            Ok(Hypothesis {
                score: gamma * h.score + mean,
                ..h.clone()
            })
        })
        .collect()
}

/// Maps fused scores from `[0, 1 + gamma]` back into `[0, 1]`, preserving
/// order, so they can be normalized like probabilities.
pub fn scale_fused(hyps: &mut [Hypothesis], gamma: f64) {
    for h in hyps {
        h.score /= 1.0 + gamma;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyp(start: u64, end: u64, score: f64) -> Hypothesis {
        Hypothesis {
            query: "q".into(),
            utterance: "u".into(),
            start_ms: start,
            end_ms: end,
            score,
        }
    }

    #[test]
    fn interval_mapping() {
        assert_eq!(frame_interval(0, 120, 40, 10), Some((0, 2)));
        assert_eq!(frame_interval(50, 60, 40, 10), Some((1, 1)));
        assert_eq!(frame_interval(40, 40, 40, 10), Some((1, 1)));
        assert_eq!(frame_interval(300, 900, 40, 10), Some((7, 9)));
        assert_eq!(frame_interval(400, 500, 40, 10), None);
    }

    #[test]
    fn fused_scores() {
        let z = [0.2, 0.4, 0.6, 0.9];
        let base = [hyp(0, 120, 0.3)];
        let r = rescore(&base, |_, _| Ok((&z[..], 40)), 1.0).unwrap();
        assert!((r[0].score - 0.7).abs() < 1e-12);
        let r = rescore(&base, |_, _| Ok((&z[..], 40)), 0.0).unwrap();
        assert!((r[0].score - 0.4).abs() < 1e-12);
        let half = [0.5; 4];
        let r = rescore(&[hyp(0, 40, 0.8), hyp(40, 160, 0.1)], |_, _| Ok((&half[..], 40)), 0.5).unwrap();
        assert!((r[0].score - 0.9).abs() < 1e-12 && (r[1].score - 0.55).abs() < 1e-12);
        assert!(rescore(&[hyp(400, 500, 0.5)], |_, _| Ok((&z[..], 40)), 1.0).is_err());
    }
}
