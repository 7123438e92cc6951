use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::eval::{Occurrence, Trial};
use crate::search::Hypothesis;
use crate::training::AlignedWord;
use crate::{Error, Result};

/// Non-empty lines of a tab-separated file with 1-based line numbers.
pub struct TsvLines {
    path: PathBuf,
    text: String,
}

impl TsvLines {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            text,
        })
    }

    pub fn from_text(path: &Path, text: String) -> Self {
        Self {
            path: path.to_path_buf(),
            text,
        }
    }

    /// Splits every line into exactly `n` fields.
    pub fn records(&self, n: usize) -> Result<Vec<(usize, Vec<&str>)>> {
        let mut out = Vec::new();
        for (i, line) in self.text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != n {
                return Err(self.error(i + 1, format!("expected {n} fields, found {}", fields.len())));
            }
            out.push((i + 1, fields));
        }
        Ok(out)
    }

    pub fn error(&self, line: usize, detail: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            detail: detail.into(),
        }
    }

    pub fn parse<T: FromStr>(&self, line: usize, field: &str, what: &str) -> Result<T> {
        field
            .parse()
            .map_err(|_| self.error(line, format!("bad {what}: {field:?}")))
    }
}

/// `query_id, utterance_id, start_ms, end_ms, score`, one per line.
pub fn format_hypotheses(hyps: &[Hypothesis]) -> String {
    let mut s = String::new();
    for h in hyps {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            h.query, h.utterance, h.start_ms, h.end_ms, h.score
        ));
    }
    s
}

pub fn write_hypotheses(path: &Path, hyps: &[Hypothesis]) -> Result<()> {
    super::atomic_write(path, format_hypotheses(hyps).as_bytes())
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<Hypothesis>> {
    let t = TsvLines::read(path)?;
    t.records(5)?
        .into_iter()
        .map(|(line, f)| {
            let h = Hypothesis {
                query: f[0].to_string(),
                utterance: f[1].to_string(),
                start_ms: t.parse(line, f[2], "start_ms")?,
                end_ms: t.parse(line, f[3], "end_ms")?,
                score: t.parse(line, f[4], "score")?,
            };
            if h.start_ms >= h.end_ms {
                return Err(t.error(line, "start_ms must be below end_ms"));
            }
            if !h.score.is_finite() {
                return Err(t.error(line, "score is not finite"));
            }
            Ok(h)
        })
        .collect()
}

/// `query_id, utterance_id, start_ms, end_ms`, one per line.
pub fn write_references(path: &Path, refs: &[Occurrence]) -> Result<()> {
    let mut s = String::new();
    for r in refs {
        s.push_str(&format!("{}\t{}\t{}\t{}\n", r.query, r.utterance, r.start_ms, r.end_ms));
    }
    super::atomic_write(path, s.as_bytes())
}

pub fn read_references(path: &Path) -> Result<Vec<Occurrence>> {
    let t = TsvLines::read(path)?;
    t.records(4)?
        .into_iter()
        .map(|(line, f)| {
            let o = Occurrence {
                query: f[0].to_string(),
                utterance: f[1].to_string(),
                start_ms: t.parse(line, f[2], "start_ms")?,
                end_ms: t.parse(line, f[3], "end_ms")?,
            };
            if o.start_ms >= o.end_ms {
                return Err(t.error(line, "start_ms must be below end_ms"));
            }
            Ok(o)
        })
        .collect()
}

/// `utterance_id, word, start_ms, end_ms`, one per line.
pub fn write_alignments(path: &Path, rows: &[(String, AlignedWord)]) -> Result<()> {
    let mut s = String::new();
    for (utt, w) in rows {
        s.push_str(&format!("{}\t{}\t{}\t{}\n", utt, w.word, w.start_ms, w.end_ms));
    }
    super::atomic_write(path, s.as_bytes())
}

pub fn read_alignments(path: &Path) -> Result<Vec<(String, AlignedWord)>> {
    let t = TsvLines::read(path)?;
    t.records(4)?
        .into_iter()
        .map(|(line, f)| {
            Ok((
                f[0].to_string(),
                AlignedWord {
                    word: f[1].to_string(),
                    start_ms: t.parse(line, f[2], "start_ms")?,
                    end_ms: t.parse(line, f[3], "end_ms")?,
                },
            ))
        })
        .collect()
}

/// One query per line, written exactly as spelled.
pub fn write_queries(path: &Path, queries: &[String]) -> Result<()> {
    let mut s = String::new();
    for q in queries {
        s.push_str(q);
        s.push('\n');
    }
    super::atomic_write(path, s.as_bytes())
}

pub fn read_queries(path: &Path) -> Result<Vec<String>> {
    let t = TsvLines::read(path)?;
    Ok(t.records(1)?.into_iter().map(|(_, f)| f[0].to_string()).collect())
}

/// `query_id, utterance_id, start_ms, end_ms, label (1 or 0), score`.
pub fn write_trials(path: &Path, trials: &[(Trial, f64)]) -> Result<()> {
    let mut s = String::new();
    for (t, score) in trials {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            t.query,
            t.utterance,
            t.start_ms,
            t.end_ms,
            u8::from(t.positive),
            score
        ));
    }
    super::atomic_write(path, s.as_bytes())
}

pub fn read_trials(path: &Path) -> Result<Vec<(Trial, f64)>> {
    let t = TsvLines::read(path)?;
    t.records(6)?
        .into_iter()
        .map(|(line, f)| {
            let positive = match f[4] {
                "1" => true,
                "0" => false,
                other => return Err(t.error(line, format!("label must be 0 or 1, found {other:?}"))),
            };
            let score: f64 = t.parse(line, f[5], "score")?;
            if !score.is_finite() {
                return Err(t.error(line, "score must be finite"));
            }
            let trial = Trial {
                query: f[0].to_string(),
                utterance: f[1].to_string(),
                start_ms: t.parse(line, f[2], "start_ms")?,
                end_ms: t.parse(line, f[3], "end_ms")?,
                positive,
            };
            Ok((trial, score))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trials_and_queries_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let trials = vec![
            (
                Trial {
                    query: "ab".into(),
                    utterance: "u1".into(),
                    start_ms: 500,
                    end_ms: 1500,
                    positive: true,
                },
                0.1f64 + 0.2,
            ),
            (
                Trial {
                    query: "ab".into(),
                    utterance: "u2".into(),
                    start_ms: 0,
                    end_ms: 1000,
                    positive: false,
                },
                1e-300,
            ),
        ];
        let p = dir.path().join("t.tsv");
        write_trials(&p, &trials).unwrap();
        assert_eq!(read_trials(&p).unwrap(), trials);
        let q = dir.path().join("q.txt");
        let queries = vec!["ab".to_string(), "ab cd".to_string()];
        write_queries(&q, &queries).unwrap();
        assert_eq!(read_queries(&q).unwrap(), queries);
    }

    #[test]
    fn hypothesis_scores_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.tsv");
        let hyps = vec![Hypothesis {
            query: "q1".into(),
            utterance: "u7".into(),
            start_ms: 40,
            end_ms: 120,
            score: 0.1 + 0.2,
        }];
        write_hypotheses(&p, &hyps).unwrap();
        assert_eq!(read_hypotheses(&p).unwrap(), hyps);
    }

    #[test]
    fn malformed_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.tsv");
        std::fs::write(&p, "q\tu\t0\t10\t0.5\nq\tu\tx\t10\t0.5\n").unwrap();
        match read_hypotheses(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
