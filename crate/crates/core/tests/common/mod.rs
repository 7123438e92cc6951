//! Reference implementations written independently of the library, plus
//! random instance generators shared by the integration tests and the
//! acceptance run.

#![allow(dead_code)]

use std::collections::BTreeMap;

use framekws::eval::{Occurrence, References};
use framekws::search::{Aggregator, DecodeConfig, Hypothesis, Island};
use rand::Rng;

/// Every maximal above-threshold run, found by testing all `(a, b)` pairs.
pub fn brute_islands(z: &[f64], cfg: &DecodeConfig, letters: usize, step_ms: u32) -> Vec<Island> {
    let n = z.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a..n {
            let inside = (a..=b).all(|i| z[i] >= cfg.threshold);
            let left_closed = a == 0 || z[a - 1] < cfg.threshold;
            let right_closed = b + 1 == n || z[b + 1] < cfg.threshold;
            if !(inside && left_closed && right_closed) {
                continue;
            }
            let len = b - a + 1;
            if ((len as u64 * step_ms as u64) as f64) < cfg.min_ms_per_letter * letters as f64 {
                continue;
            }
            let mut run = z[a..=b].to_vec();
            let score = match cfg.aggregator {
                Aggregator::Median => {
                    run.sort_by(|x, y| x.partial_cmp(y).unwrap());
                    if len % 2 == 1 {
                        run[len / 2]
                    } else {
                        (run[len / 2 - 1] + run[len / 2]) / 2.0
                    }
                }
                Aggregator::Mean => {
                    let mut s = 0.0;
                    for v in &run {
                        s += v;
                    }
                    s / len as f64
                }
                Aggregator::Max => run.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            out.push(Island { first: a, last: b, score });
        }
    }
    out
}

/// Probability vectors with long runs, exact threshold values and repeated
/// entries so that ties and boundary cases occur.
pub fn random_probs<R: Rng>(rng: &mut R, threshold: f64) -> Vec<f64> {
    let n = rng.gen_range(0..60);
    let mut z = Vec::with_capacity(n);
    let mut high = rng.gen_bool(0.5);
    while z.len() < n {
        let run = rng.gen_range(1..8).min(n - z.len());
        for _ in 0..run {
            let v = match rng.gen_range(0..10) {
                0 => threshold,
                1 => (rng.gen_range(0..4) as f64) / 4.0,
                _ if high => rng.gen_range(threshold..=1.0),
                _ => rng.gen_range(0.0..threshold),
            };
            z.push(v);
        }
        high = !high;
    }
    z
}

pub fn random_decode_config<R: Rng>(rng: &mut R) -> DecodeConfig {
    DecodeConfig {
        threshold: [0.25, 0.5, 0.7][rng.gen_range(0..3)],
        min_ms_per_letter: [0.0, 10.0, 20.0, 35.0][rng.gen_range(0..4)],
        aggregator: [Aggregator::Median, Aggregator::Mean, Aggregator::Max][rng.gen_range(0..3)],
    }
}

/// TWV recomputed from scratch: a quadratic greedy alignment followed by
/// direct counting at `theta`.
pub fn recount_twv(hyps: &[Hypothesis], refs: &References, tolerance_ms: f64, beta: f64, theta: f64) -> f64 {
    let mut order: Vec<usize> = (0..hyps.len()).collect();
    // Stable sort keeps input order among equal scores.
    order.sort_by(|&a, &b| hyps[b].score.partial_cmp(&hyps[a].score).unwrap());
    let mut taken = vec![false; refs.occurrences.len()];
    let mut correct = vec![false; hyps.len()];
    for &i in &order {
        let h = &hyps[i];
        let mid = (h.start_ms as f64 + h.end_ms as f64) / 2.0;
        let mut best: Option<(f64, usize)> = None;
        for (r, o) in refs.occurrences.iter().enumerate() {
            if taken[r] || o.query != h.query || o.utterance != h.utterance {
                continue;
            }
            if mid < o.start_ms as f64 - tolerance_ms || mid > o.end_ms as f64 + tolerance_ms {
                continue;
            }
            let d = (mid - (o.start_ms as f64 + o.end_ms as f64) / 2.0).abs();
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, r));
            }
        }
        if let Some((_, r)) = best {
            taken[r] = true;
            correct[i] = true;
        }
    }
    let mut ntrue: BTreeMap<&str, usize> = BTreeMap::new();
    for q in &refs.queries {
        ntrue.insert(q, 0);
    }
    for o in &refs.occurrences {
        *ntrue.get_mut(o.query.as_str()).unwrap() += 1;
    }
    let trials = refs.duration_s.floor();
    let mut cost = 0.0;
    let mut k = 0;
    for (q, &n) in &ntrue {
        if n == 0 {
            continue;
        }
        let mut hit = 0;
        let mut fa = 0;
        for (h, &c) in hyps.iter().zip(&correct) {
            if h.query == *q && h.score >= theta {
                if c {
                    hit += 1;
                } else {
                    fa += 1;
                }
            }
        }
        let p_miss = 1.0 - hit as f64 / n as f64;
        let p_fa = fa as f64 / (trials - n as f64);
        cost += p_miss + beta * p_fa;
        k += 1;
    }
    1.0 - cost / k as f64
}

/// A random search result: a few queries over a few utterances, hits near
/// and away from references, scores on a coarse grid so ties are common.
pub fn random_instance<R: Rng>(rng: &mut R) -> (Vec<Hypothesis>, References) {
    let queries: Vec<String> = (0..rng.gen_range(1..5)).map(|i| format!("q{i}")).collect();
    let utts: Vec<String> = (0..rng.gen_range(1..4)).map(|i| format!("u{i}")).collect();
    let mut occ = Vec::new();
    for q in &queries {
        for _ in 0..rng.gen_range(0..5) {
            let start = rng.gen_range(0..20_000);
            occ.push(Occurrence {
                query: q.clone(),
                utterance: utts[rng.gen_range(0..utts.len())].clone(),
                start_ms: start,
                end_ms: start + rng.gen_range(200..900),
            });
        }
    }
    if occ.is_empty() {
        occ.push(Occurrence {
            query: queries[0].clone(),
            utterance: utts[0].clone(),
            start_ms: 1000,
            end_ms: 1500,
        });
    }
    let mut hyps = Vec::new();
    let score = |rng: &mut R| (rng.gen_range(0..=20) as f64) / 20.0;
    for o in &occ {
        for _ in 0..rng.gen_range(0..3) {
            let shift = rng.gen_range(-900i64..900);
            let start = (o.start_ms as i64 + shift).max(0) as u64;
            hyps.push(Hypothesis {
                query: o.query.clone(),
                utterance: o.utterance.clone(),
                start_ms: start,
                end_ms: start + rng.gen_range(100..800),
                score: score(rng),
            });
        }
    }
    for _ in 0..rng.gen_range(0..10) {
        let start = rng.gen_range(0..20_000);
        hyps.push(Hypothesis {
            query: queries[rng.gen_range(0..queries.len())].clone(),
            utterance: utts[rng.gen_range(0..utts.len())].clone(),
            start_ms: start,
            end_ms: start + rng.gen_range(100..800),
            score: score(rng),
        });
    }
    let duration = rng.gen_range(60.0..600.0);
    (hyps, References::new(occ, duration, &queries))
}

/// Binary cross-entropy `-(y ln z + (1 - y) ln(1 - z))`, summed.
pub fn bce(z: &[f64], y: &[f32]) -> f64 {
    z.iter()
        .zip(y)
        .map(|(&z, &y)| {
            let y = y as f64;
            -(y * z.ln() + (1.0 - y) * (1.0 - z).ln())
        })
        .sum()
}
