use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tempfile::TempDir;

const TINY: &str = r#"
[synth]
train_utterances = 10
dev_utterances = 4
eval_utterances = 4
vocabulary = 8
oov_words = 3

[model]
embedding_dim = 4
query_layers = [4]
doc_layers = [6, 6]
doc_downsample = [2, 2]
joint_dim = 5
dropout = 0.1

[sampler]
batch_phrases = 8

[schedule]
max_epochs = 2
learning_rate = 0.01
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_framekws"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Every file under `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A tiny corpus and a model trained on it.
fn trained() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok(dir.path(), &["--config", "tiny.toml", "synth", "--out", "corpus"]);
    ok(dir.path(), &["--config", "tiny.toml", "train", "--corpus", "corpus", "--out", "model"]);
    dir
}

#[test]
fn synth_is_deterministic_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok(dir.path(), &["--config", "tiny.toml", "--seed", "5", "synth", "--out", "a"]);
    ok(dir.path(), &["--config", "tiny.toml", "--seed", "5", "synth", "--out", "nested/b"]);
    ok(dir.path(), &["--config", "tiny.toml", "--seed", "6", "synth", "--out", "c"]);
    let a = tree(&dir.path().join("a"));
    assert_eq!(a, tree(&dir.path().join("nested/b")));
    assert_ne!(a, tree(&dir.path().join("c")));

    let corpus = framekws::io::read_split(&dir.path().join("a/train")).unwrap();
    assert_eq!(corpus.len(), 10);
    for u in &corpus.utterances {
        let last = u.words.last().unwrap();
        assert!(last.end_ms <= u.duration_ms());
    }
}

#[test]
fn unwritable_output_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    std::fs::write(dir.path().join("file"), "").unwrap();
    let out = run(dir.path(), &["--config", "tiny.toml", "synth", "--out", "file/corpus"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_config_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--set", "synth.vocabulary=0", "synth", "--out", "c"]);
    assert_eq!(code(&out), 3);
    let out = run(dir.path(), &["--set", "synth.no_such_key=1", "synth", "--out", "c"]);
    assert_eq!(code(&out), 3);
    let out = run(dir.path(), &["synth"]);
    assert_eq!(code(&out), 3, "missing --out");
}

#[test]
fn smoke_training_is_fast_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok(dir.path(), &["--config", "tiny.toml", "synth", "--out", "corpus"]);
    let t = Instant::now();
    ok(dir.path(), &["--config", "tiny.toml", "train", "--corpus", "corpus", "--out", "m1"]);
    assert!(t.elapsed() < Duration::from_secs(60));
    ok(dir.path(), &["--config", "tiny.toml", "train", "--corpus", "corpus", "--out", "m2"]);
    assert_eq!(tree(&dir.path().join("m1")), tree(&dir.path().join("m2")));

    let log = std::fs::read_to_string(dir.path().join("m1/train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        assert_eq!(line.split('\t').count(), 4);
    }
}

#[test]
fn resume_continues_the_epoch_count() {
    let dir = trained();
    let p = dir.path();
    ok(p, &["--config", "tiny.toml", "train", "--corpus", "corpus", "--out", "model", "--resume"]);
    let log = std::fs::read_to_string(p.join("model/train_log.tsv")).unwrap();
    let epochs: Vec<usize> = log.lines().map(|l| l.split('\t').next().unwrap().parse().unwrap()).collect();
    assert_eq!(epochs, vec![1, 2, 3, 4]);
}

#[test]
fn search_matches_index_then_search() {
    let dir = trained();
    let p = dir.path();
    ok(p, &["index", "--model", "model", "--corpus", "corpus", "--split", "dev", "--out", "idx"]);
    let q = "corpus/dev/queries.txt";
    let common = ["--set", "decode.threshold=0.05", "search", "--model", "model", "--queries", q];
    ok(p, &[&common[..], &["--index", "idx/index.bin", "--out", "s1"]].concat());
    ok(p, &[&common[..], &["--corpus", "corpus", "--split", "dev", "--out", "s2"]].concat());
    let a = std::fs::read(p.join("s1/hypotheses.tsv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(p.join("s2/hypotheses.tsv")).unwrap());

    // Rebuilding the index gives the same bytes.
    ok(p, &["index", "--model", "model", "--corpus", "corpus", "--split", "dev", "--out", "idx2"]);
    assert_eq!(
        std::fs::read(p.join("idx/index.bin")).unwrap(),
        std::fs::read(p.join("idx2/index.bin")).unwrap()
    );
}

#[test]
fn index_from_another_model_is_rejected() {
    let dir = trained();
    let p = dir.path();
    ok(p, &["index", "--model", "model", "--corpus", "corpus", "--out", "idx"]);
    ok(
        p,
        &["--config", "tiny.toml", "--set", "model.joint_dim=6", "train", "--corpus", "corpus", "--out", "other"],
    );
    let out = run(
        p,
        &["search", "--model", "other", "--index", "idx/index.bin", "--queries", "corpus/dev/queries.txt", "--out", "s"],
    );
    assert_eq!(code(&out), 6, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn rescore_with_zero_gamma_ignores_baseline_scores() {
    let dir = trained();
    let p = dir.path();
    let base = "q\tdev00000\t0\t400\t0.9\nq\tdev00001\t120\t800\t0.1\n";
    let q = std::fs::read_to_string(p.join("corpus/dev/queries.txt")).unwrap();
    let q = q.lines().next().unwrap();
    std::fs::write(p.join("b1.tsv"), base.replace('q', q)).unwrap();
    std::fs::write(p.join("b2.tsv"), base.replace('q', q).replace("0.9", "0.2").replace("0.1\n", "0.7\n")).unwrap();
    for (b, o) in [("b1.tsv", "r1"), ("b2.tsv", "r2")] {
        ok(p, &["rescore", "--model", "model", "--corpus", "corpus", "--baseline", b, "--gamma", "0", "--out", o]);
    }
    let r1 = framekws::io::read_hypotheses(&p.join("r1/hypotheses.tsv")).unwrap();
    let r2 = framekws::io::read_hypotheses(&p.join("r2/hypotheses.tsv")).unwrap();
    assert_eq!(r1, r2);
    let b1 = framekws::io::read_hypotheses(&p.join("b1.tsv")).unwrap();
    for (r, b) in r1.iter().zip(&b1) {
        assert_eq!((&r.query, &r.utterance, r.start_ms, r.end_ms), (&b.query, &b.utterance, b.start_ms, b.end_ms));
    }
}

#[test]
fn classify_then_score() {
    let dir = trained();
    let p = dir.path();
    let q = "corpus/dev/queries.txt";
    ok(p, &["classify", "--model", "model", "--corpus", "corpus", "--queries", q, "--out", "c1"]);
    ok(p, &["classify", "--model", "model", "--corpus", "corpus", "--queries", q, "--out", "c2"]);
    let trials = std::fs::read(p.join("c1/trials.tsv")).unwrap();
    assert_eq!(trials, std::fs::read(p.join("c2/trials.tsv")).unwrap());
    ok(p, &["score", "--mode", "classification", "--hypotheses", "c1/trials.tsv", "--queries", q, "--out", "sc"]);
    let r = report(&p.join("sc/report.json"));
    let auc = r["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(r["trials"].as_u64().unwrap(), 2 * r["positives"].as_u64().unwrap());
}

fn write_score_inputs(p: &Path, hyps: &str) {
    std::fs::write(p.join("refs.tsv"), "kw\tu1\t1000\t2000\n").unwrap();
    std::fs::write(p.join("hyps.tsv"), hyps).unwrap();
}

#[test]
fn worked_example_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_score_inputs(p, "kw\tu1\t1100\t1900\t0.9\nkw\tu1\t5000\t6000\t0.8\n");
    let args = ["score", "--hypotheses", "hyps.tsv", "--references", "refs.tsv", "--duration", "3600"];
    let out = ok(p, &[&args[..], &["--threshold", "0.5", "--out", "atwv"]].concat());
    let r = report(&p.join("atwv/report.json"));
    let expected = 1.0 - 999.9 / 3599.0;
    assert!((r["twv"].as_f64().unwrap() - 0.72217).abs() < 1e-5);
    assert!((r["twv"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ATWV"));

    // The sweep finds the better threshold that drops the false alarm.
    ok(p, &[&args[..], &["--out", "mtwv"]].concat());
    let r = report(&p.join("mtwv/report.json"));
    assert_eq!(r["mtwv"].as_f64().unwrap(), 1.0);
    assert!(std::fs::read_to_string(p.join("mtwv/det.tsv")).unwrap().lines().count() >= 2);
}

#[test]
fn perfect_and_empty_hypotheses() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["score", "--hypotheses", "hyps.tsv", "--references", "refs.tsv", "--duration", "60"];
    write_score_inputs(p, "kw\tu1\t1000\t2000\t1\n");
    ok(p, &[&args[..], &["--out", "perfect"]].concat());
    assert_eq!(report(&p.join("perfect/report.json"))["mtwv"].as_f64().unwrap(), 1.0);
    write_score_inputs(p, "");
    ok(p, &[&args[..], &["--threshold", "0.5", "--out", "empty"]].concat());
    assert_eq!(report(&p.join("empty/report.json"))["twv"].as_f64().unwrap(), 0.0);
}

#[test]
fn unknown_query_ids_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_score_inputs(p, "kw\tu1\t1000\t2000\t0.9\nzz\tu1\t0\t500\t0.4\n");
    let out = run(
        p,
        &["score", "--hypotheses", "hyps.tsv", "--references", "refs.tsv", "--duration", "60", "--out", "s"],
    );
    assert_eq!(code(&out), 8);
    assert!(String::from_utf8_lossy(&out.stderr).contains("zz"));

    // Listing the query makes it known (with no occurrences).
    std::fs::write(p.join("q.txt"), "kw\nzz\n").unwrap();
    ok(
        p,
        &["score", "--hypotheses", "hyps.tsv", "--references", "refs.tsv", "--queries", "q.txt", "--duration", "60", "--out", "s"],
    );
    let r = report(&p.join("s/report.json"));
    assert_eq!(r["excluded"], serde_json::json!(["zz"]));
}

#[test]
fn kst_rejects_fused_scores_above_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_score_inputs(p, "kw\tu1\t1000\t2000\t1.4\n");
    let out = run(
        p,
        &["score", "--kst", "--hypotheses", "hyps.tsv", "--references", "refs.tsv", "--duration", "60", "--out", "s"],
    );
    assert_eq!(code(&out), 5);
}

#[test]
fn malformed_hypotheses_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_score_inputs(p, "kw\tu1\t2000\t1000\t0.5\n");
    let out = run(
        p,
        &["score", "--hypotheses", "hyps.tsv", "--references", "refs.tsv", "--duration", "60", "--out", "s"],
    );
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("hyps.tsv:1"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--out", "g"]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.lines().count() >= 10);
    assert!(!table.contains("FAILED"));
}
