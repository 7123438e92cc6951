use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::References;
use crate::search::Hypothesis;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwvConfig {
    pub beta: f64,
    /// How far outside a reference span a hit's midpoint may fall.
    pub tolerance_ms: f64,
}

impl Default for TwvConfig {
    fn default() -> Self {
        Self {
            beta: 999.9,
            tolerance_ms: 500.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledHit {
    pub hyp: Hypothesis,
    pub correct: bool,
}

/// Hits labeled against references, in descending score order.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub hits: Vec<LabeledHit>,
    /// References no hit was credited with, per query.
    pub misses: BTreeMap<String, usize>,
}

/// Greedy one-to-one matching in descending score order. A hit is correct
/// when its midpoint lies within `tolerance` of an unmatched reference of
/// the same query and utterance; the reference whose midpoint is closest
/// is taken. Everything else is a false alarm.
pub fn align_hits(hyps: &[Hypothesis], refs: &References, tolerance_ms: f64) -> Alignment {
    let mut pool: BTreeMap<(&str, &str), Vec<(usize, f64, f64)>> = BTreeMap::new();
    for (i, o) in refs.occurrences.iter().enumerate() {
        pool.entry((o.query.as_str(), o.utterance.as_str()))
            .or_default()
            .push((i, o.start_ms as f64, o.end_ms as f64));
    }
    let mut order: Vec<usize> = (0..hyps.len()).collect();
    order.sort_by(|&a, &b| hyps[b].score.total_cmp(&hyps[a].score).then(a.cmp(&b)));
    let mut used = vec![false; refs.occurrences.len()];
    let mut hits = Vec::with_capacity(hyps.len());
    for i in order {
        let h = &hyps[i];
        let mid = h.midpoint_ms();
        let best = pool
            .get(&(h.query.as_str(), h.utterance.as_str()))
            .into_iter()
            .flatten()
            .filter(|&&(r, s, e)| !used[r] && mid >= s - tolerance_ms && mid <= e + tolerance_ms)
            .min_by(|a, b| {
                let da = (mid - (a.1 + a.2) / 2.0).abs();
                let db = (mid - (b.1 + b.2) / 2.0).abs();
                da.total_cmp(&db).then(a.0.cmp(&b.0))
            })
            .map(|&(r, _, _)| r);
        if let Some(r) = best {
            used[r] = true;
        }
        hits.push(LabeledHit {
            hyp: h.clone(),
            correct: best.is_some(),
        });
    }
    let mut misses: BTreeMap<String, usize> = BTreeMap::new();
    for (o, u) in refs.occurrences.iter().zip(&used) {
        let m = misses.entry(o.query.clone()).or_default();
        if !u {
            *m += 1;
        }
    }
    Alignment { hits, misses }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryTwv {
    pub query: String,
    pub ntrue: usize,
    pub correct: usize,
    pub false_alarms: usize,
    pub p_miss: f64,
    pub p_fa: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwvReport {
    pub threshold: f64,
    pub twv: f64,
    pub p_miss: f64,
    pub p_fa: f64,
    /// Queries with at least one occurrence, which the averages cover.
    pub per_query: Vec<QueryTwv>,
    /// Queries without occurrences, left out of the averages.
    pub excluded: Vec<String>,
}

/// Per-query counts from which TWV at any threshold follows.
struct Counts<'a> {
    queries: Vec<(&'a str, usize)>,
    excluded: Vec<String>,
    slot: BTreeMap<&'a str, usize>,
    trials_s: f64,
}

impl<'a> Counts<'a> {
    fn new(refs: &'a References, hits: &'a [LabeledHit]) -> Result<Self> {
        let ntrue = refs.ntrue();
        let mut queries = Vec::new();
        let mut excluded = Vec::new();
        for (&q, &n) in &ntrue {
            if n > 0 {
                queries.push((q, n));
            } else {
                excluded.push(q.to_string());
            }
        }
        for h in hits {
            if !ntrue.contains_key(h.hyp.query.as_str()) {
                excluded.push(h.hyp.query.clone());
            }
        }
        excluded.sort();
        excluded.dedup();
        if queries.is_empty() {
            return Err(Error::Empty("queries with reference occurrences"));
        }
        let slot = queries.iter().enumerate().map(|(i, &(q, _))| (q, i)).collect();
        Ok(Self {
            queries,
            excluded,
            slot,
            trials_s: refs.duration_s.floor(),
        })
    }

    fn report(&self, threshold: f64, correct: &[usize], fa: &[usize], beta: f64) -> TwvReport {
        let mut per_query = Vec::with_capacity(self.queries.len());
        let (mut sm, mut sf) = (0.0, 0.0);
        for (i, &(q, n)) in self.queries.iter().enumerate() {
            let p_miss = 1.0 - correct[i] as f64 / n as f64;
            let p_fa = fa[i] as f64 / (self.trials_s - n as f64);
            sm += p_miss;
            sf += p_fa;
            per_query.push(QueryTwv {
                query: q.to_string(),
                ntrue: n,
                correct: correct[i],
                false_alarms: fa[i],
                p_miss,
                p_fa,
            });
        }
        let k = self.queries.len() as f64;
        let cost: f64 = per_query.iter().map(|p| p.p_miss + beta * p.p_fa).sum();
        TwvReport {
            threshold,
            twv: 1.0 - cost / k,
            p_miss: sm / k,
            p_fa: sf / k,
            per_query,
            excluded: self.excluded.clone(),
        }
    }
}

/// TWV at threshold `theta`: hits scoring below it are discarded, then
/// `1 - mean_q (P_miss(q) + beta * P_FA(q))` over queries with
/// occurrences, with `floor(T) - N_true(q)` one-second non-target trials.
pub fn twv(alignment: &Alignment, refs: &References, cfg: &TwvConfig, theta: f64) -> Result<TwvReport> {
    let c = Counts::new(refs, &alignment.hits)?;
    let n = c.queries.len();
    let (mut correct, mut fa) = (vec![0; n], vec![0; n]);
    for h in alignment.hits.iter().filter(|h| h.hyp.score >= theta) {
        if let Some(&i) = c.slot.get(h.hyp.query.as_str()) {
            if h.correct {
                correct[i] += 1;
            } else {
                fa[i] += 1;
            }
        }
    }
    Ok(c.report(theta, &correct, &fa, cfg.beta))
}

/// One detection-error-tradeoff point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
    pub twv: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub mtwv: f64,
    /// Lowest threshold reaching the maximum.
    pub threshold: f64,
    /// One point per candidate threshold, ascending.
    pub det: Vec<DetPoint>,
}

/// Exact maximum of TWV over thresholds. TWV only changes at hit scores,
/// so the candidates are every distinct score plus 0, 1 and a value just
/// above the highest score.
pub fn mtwv_sweep(alignment: &Alignment, refs: &References, cfg: &TwvConfig) -> Result<Sweep> {
    let c = Counts::new(refs, &alignment.hits)?;
    let mut cands: Vec<f64> = alignment.hits.iter().map(|h| h.hyp.score).collect();
    cands.extend([0.0, 1.0]);
    if let Some(max) = cands.iter().copied().reduce(f64::max) {
        if max >= 1.0 {
            cands.push(next_up(max));
        }
    }
    cands.sort_by(|a, b| b.total_cmp(a));
    cands.dedup();
    // Hits are already in descending score order.
    let n = c.queries.len();
    let (mut correct, mut fa) = (vec![0; n], vec![0; n]);
    let mut next = 0;
    let mut det = Vec::with_capacity(cands.len());
    for &theta in &cands {
        while next < alignment.hits.len() && alignment.hits[next].hyp.score >= theta {
            let h = &alignment.hits[next];
            if let Some(&i) = c.slot.get(h.hyp.query.as_str()) {
                if h.correct {
                    correct[i] += 1;
                } else {
                    fa[i] += 1;
                }
            }
            next += 1;
        }
        let r = c.report(theta, &correct, &fa, cfg.beta);
        det.push(DetPoint {
            threshold: theta,
            p_miss: r.p_miss,
            p_fa: r.p_fa,
            twv: r.twv,
        });
    }
    det.reverse();
    let best = det
        .iter()
        .fold(None::<DetPoint>, |acc, p| match acc {
            Some(a) if a.twv >= p.twv => Some(a),
            _ => Some(*p),
        })
        .expect("at least two candidates");
    Ok(Sweep {
        mtwv: best.twv,
        threshold: best.threshold,
        det,
    })
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}
