use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use framekws::encoders::{encode_query, load_adam, save_adam, score_frames, ParameterStore, Phase, QueryEmbedding};
use framekws::eval::{
    accuracy_auc, align_hits, find_occurrences, kst_normalize, make_classification_trials, mtwv_sweep, twv,
    References,
};
use framekws::io::{
    atomic_write, read_hypotheses, read_queries, read_references, read_split, read_trials, write_hypotheses,
    write_queries, write_references, write_split, write_trials,
};
use framekws::search::{rescore as fuse, scale_fused, DocumentIndex};
use framekws::synth::{generate, split_queries};
use framekws::training::{train as run_training, Resume, SymbolInventory, TrainingCorpus};
use framekws::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::settings::{config_error, resolve, Settings};
use crate::{Documents, ScoreMode, Shared};

pub const CONFIG_FILE: &str = "config.toml";
pub const INVENTORY_FILE: &str = "inventory.txt";
pub const DURATIONS_FILE: &str = "durations.tsv";
pub const LEXICON_FILE: &str = "lexicon.tsv";
pub const PARAMS_FILE: &str = "params.bin";
pub const ADAM_FILE: &str = "adam.bin";
pub const LOG_FILE: &str = "train_log.tsv";
pub const INDEX_FILE: &str = "index.bin";
pub const HYPOTHESES_FILE: &str = "hypotheses.tsv";
pub const TRIALS_FILE: &str = "trials.tsv";
pub const REFERENCES_FILE: &str = "references.tsv";
pub const REPORT_FILE: &str = "report.json";
pub const DET_FILE: &str = "det.tsv";

const SPLITS: [&str; 3] = ["train", "dev", "eval"];
const DEFAULT_SEED: u64 = 1;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_INPUT: u8 = 5;
const EXIT_FINGERPRINT: u8 = 6;
const EXIT_NON_FINITE: u8 = 7;
const EXIT_UNKNOWN_QUERY: u8 = 8;
const EXIT_GRADCHECK: u8 = 9;

/// Query ids in a hypothesis or trial file that the references do not know.
#[derive(Debug)]
pub struct UnknownQueries(pub Vec<String>);

impl fmt::Display for UnknownQueries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} unknown query id(s): {}", self.0.len(), self.0.join(", "))
    }
}

impl std::error::Error for UnknownQueries {}

#[derive(Debug)]
pub struct GradcheckFailed(pub Vec<String>);

impl fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "gradient check failed for {}", self.0.join(", "))
    }
}

impl std::error::Error for GradcheckFailed {}

/// Distinct exit status per failure class; clap uses 2 for usage errors.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UnknownQueries>() {
            return EXIT_UNKNOWN_QUERY;
        }
        if cause.is::<GradcheckFailed>() {
            return EXIT_GRADCHECK;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Config(_) => EXIT_CONFIG,
                Error::Io { .. } => EXIT_IO,
                Error::Fingerprint { .. } => EXIT_FINGERPRINT,
                Error::NonFinite(_) => EXIT_NON_FINITE,
                _ => EXIT_INPUT,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_FAILURE
}

pub fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(config_error("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting the worker pool")?;
    }
    Ok(())
}

fn out_dir(s: &Shared) -> Result<&Path> {
    s.out
        .as_deref()
        .ok_or_else(|| config_error("--out is required for this command".into()))
}

/// Logs the resolved settings and seed, and saves them next to the outputs.
fn echo(out: &Path, command: &str, seed: u64, settings: &Settings) -> Result<()> {
    let text = format!("# framekws {command}, seed {seed}\n{}", settings.to_toml());
    eprintln!("{text}");
    atomic_write(&out.join(CONFIG_FILE), text.as_bytes())?;
    Ok(())
}

fn write_inventory(path: &Path, inv: &SymbolInventory) -> Result<()> {
    let text: String = inv.letters().iter().map(|c| format!("{c}\n")).collect();
    Ok(atomic_write(path, text.as_bytes())?)
}

fn read_inventory(path: &Path) -> Result<SymbolInventory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut letters = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut chars = line.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => letters.push(c),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: "expected exactly one symbol".into(),
                }
                .into())
            }
        }
    }
    Ok(SymbolInventory::new(&letters)?)
}

fn split_dir(corpus: &Path, split: &str) -> PathBuf {
    corpus.join(split)
}

pub fn synth(s: &Shared) -> Result<()> {
    let mut st = resolve(s.config.as_deref(), &s.overrides)?.settings;
    if let Some(seed) = s.seed {
        st.synth.seed = seed;
    }
    let out = out_dir(s)?;
    let corpus = generate(&st.synth)?;
    let splits = [&corpus.train, &corpus.dev, &corpus.eval];
    let mut durations = String::new();
    for (name, split) in SPLITS.iter().zip(splits) {
        write_split(&split_dir(out, name), split)?;
        durations.push_str(&format!("{name}\t{}\n", split.duration_s()));
    }
    atomic_write(&out.join(DURATIONS_FILE), durations.as_bytes())?;
    write_inventory(&out.join(INVENTORY_FILE), &corpus.inventory)?;
    let mut lexicon = String::new();
    for (words, kind) in [(&corpus.vocabulary, "iv"), (&corpus.oov_vocabulary, "oov")] {
        for w in words {
            lexicon.push_str(&format!("{w}\t{kind}\n"));
        }
    }
    atomic_write(&out.join(LEXICON_FILE), lexicon.as_bytes())?;

    let mut rng = ChaCha8Rng::seed_from_u64(st.synth.seed);
    rng.set_stream(u64::MAX);
    for (name, split) in [("dev", &corpus.dev), ("eval", &corpus.eval)] {
        let dir = split_dir(out, name);
        let (iv, oov) = split_queries(&corpus, split, st.queries.iv, st.queries.oov, &mut rng);
        let all: Vec<String> = iv.iter().chain(&oov).cloned().collect();
        write_queries(&dir.join("queries.iv.txt"), &iv)?;
        write_queries(&dir.join("queries.oov.txt"), &oov)?;
        write_queries(&dir.join("queries.txt"), &all)?;
        write_references(&dir.join(REFERENCES_FILE), &find_occurrences(split, &all))?;
    }
    echo(out, "synth", st.synth.seed, &st)
}

pub fn train(s: &Shared, corpus_dir: &Path, resume: bool) -> Result<()> {
    let resolved = resolve(s.config.as_deref(), &s.overrides)?;
    let mut st = resolved.settings.clone();
    let seed = s.seed.unwrap_or(DEFAULT_SEED);
    let out = out_dir(s)?;
    let corpus = read_split(&split_dir(corpus_dir, "train"))?;
    let inv_path = corpus_dir.join(INVENTORY_FILE);
    let inventory = if inv_path.exists() {
        read_inventory(&inv_path)?
    } else {
        SymbolInventory::from_words(corpus.utterances.iter().flat_map(|u| u.words.iter().map(|w| w.word.as_str())))?
    };
    if !resolved.is_set("model.inventory_size") {
        st.model.inventory_size = inventory.len();
    }
    if !resolved.is_set("model.feature_dim") {
        if let Some(u) = corpus.utterances.first() {
            st.model.feature_dim = u.features.cols();
        }
    }
    let cfg = st.train_config();
    let log_path = out.join(LOG_FILE);
    let mut lines = Vec::new();
    let resume = if resume {
        let params = ParameterStore::load(&out.join(PARAMS_FILE), &cfg.model)?;
        let adam = load_adam(&out.join(ADAM_FILE), &cfg.model)?;
        let text = std::fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        lines = text.lines().map(|l| format!("{l}\n")).collect();
        Some(Resume {
            params,
            adam,
            epochs_done: lines.len(),
        })
    } else {
        None
    };
    echo(out, "train", seed, &st)?;
    write_inventory(&out.join(INVENTORY_FILE), &inventory)?;

    let mut log_error = None;
    let outcome = run_training(&corpus, &inventory, &cfg, seed, resume, &mut |e| {
        eprint!("epoch {}", e.tsv_line());
        lines.push(e.tsv_line());
        if let Err(err) = atomic_write(&log_path, lines.concat().as_bytes()) {
            log_error.get_or_insert(err);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e.into());
    }
    outcome.params.save(&out.join(PARAMS_FILE))?;
    save_adam(&out.join(ADAM_FILE), &outcome.adam, &cfg.model)?;
    eprintln!("best epoch {}", outcome.best_epoch);
    Ok(())
}

struct Model {
    params: ParameterStore,
    inventory: SymbolInventory,
}

impl Model {
    fn load(dir: &Path) -> Result<Self> {
        let settings = Settings::from_file(&dir.join(CONFIG_FILE))?;
        Ok(Self {
            params: ParameterStore::load(&dir.join(PARAMS_FILE), &settings.model)?,
            inventory: read_inventory(&dir.join(INVENTORY_FILE))?,
        })
    }

    fn embed(&self, query: &str) -> Result<QueryEmbedding> {
        let symbols = self
            .inventory
            .encode(query)
            .with_context(|| format!("spelling query {query:?}"))?;
        Ok(encode_query(&self.params, &symbols, &mut Phase::Infer)?)
    }
}

fn build_index(params: &ParameterStore, corpus: &TrainingCorpus) -> Result<DocumentIndex> {
    let docs: Vec<_> = corpus
        .utterances
        .iter()
        .map(|u| (u.id.clone(), u.features.clone()))
        .collect();
    Ok(DocumentIndex::build(params, &docs)?)
}

fn open_documents(docs: &Documents, model: &Model) -> Result<DocumentIndex> {
    match (&docs.index, &docs.corpus) {
        (Some(path), _) => Ok(DocumentIndex::load(path, model.params.config())?),
        (None, Some(corpus)) => build_index(&model.params, &read_split(&split_dir(corpus, &docs.split))?),
        (None, None) => Err(config_error("either --index or --corpus is required".into())),
    }
}

pub fn index(s: &Shared, model_dir: &Path, corpus: &Path, split: &str) -> Result<()> {
    let st = resolve(s.config.as_deref(), &s.overrides)?.settings;
    let out = out_dir(s)?;
    let model = Model::load(model_dir)?;
    let index = build_index(&model.params, &read_split(&split_dir(corpus, split))?)?;
    index.save(&out.join(INDEX_FILE))?;
    echo(out, "index", s.seed.unwrap_or(DEFAULT_SEED), &st)
}

pub fn search(s: &Shared, model_dir: &Path, docs: &Documents, queries: &Path) -> Result<()> {
    let st = resolve(s.config.as_deref(), &s.overrides)?.settings;
    st.decode.validate()?;
    let out = out_dir(s)?;
    let model = Model::load(model_dir)?;
    let index = open_documents(docs, &model)?;
    let mut hyps = Vec::new();
    for q in read_queries(queries)? {
        let e = model.embed(&q)?;
        hyps.extend(index.search(&q, &e, SymbolInventory::letter_count(&q), &st.decode)?);
    }
    write_hypotheses(&out.join(HYPOTHESES_FILE), &hyps)?;
    echo(out, "search", s.seed.unwrap_or(DEFAULT_SEED), &st)
}

pub fn classify(s: &Shared, model_dir: &Path, docs: &Documents, queries: &Path) -> Result<()> {
    let st = resolve(s.config.as_deref(), &s.overrides)?.settings;
    let seed = s.seed.unwrap_or(DEFAULT_SEED);
    let out = out_dir(s)?;
    let Some(corpus_dir) = &docs.corpus else {
        return Err(config_error("classify needs --corpus for the alignments".into()));
    };
    let model = Model::load(model_dir)?;
    let corpus = read_split(&split_dir(corpus_dir, &docs.split))?;
    let index = match &docs.index {
        Some(path) => DocumentIndex::load(path, model.params.config())?,
        None => build_index(&model.params, &corpus)?,
    };
    let queries = read_queries(queries)?;
    let embeddings = queries
        .iter()
        .map(|q| Ok((q.as_str(), model.embed(q)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let utterances: Vec<(String, u64)> = corpus.utterances.iter().map(|u| (u.id.clone(), u.duration_ms())).collect();
    let occurrences = find_occurrences(&corpus, &queries);
    let trials = make_classification_trials(&utterances, &occurrences, &queries, &mut ChaCha8Rng::seed_from_u64(seed));
    let scored = trials
        .into_iter()
        .map(|t| {
            let score = index.score_segment(&t.utterance, t.start_ms, t.end_ms, &embeddings[t.query.as_str()])?;
            Ok((t, score))
        })
        .collect::<Result<Vec<_>>>()?;
    write_trials(&out.join(TRIALS_FILE), &scored)?;
    echo(out, "classify", seed, &st)
}

pub fn rescore(s: &Shared, model_dir: &Path, docs: &Documents, baseline: &Path, gamma: f64, scale: bool) -> Result<()> {
    let st = resolve(s.config.as_deref(), &s.overrides)?.settings;
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(config_error(format!("--gamma must be a nonnegative number, got {gamma}")));
    }
    let out = out_dir(s)?;
    let model = Model::load(model_dir)?;
    let index = open_documents(docs, &model)?;
    let hyps = read_hypotheses(baseline)?;
    let mut embeddings = BTreeMap::new();
    let mut probs: BTreeMap<(String, String), (Vec<f64>, u32)> = BTreeMap::new();
    for h in &hyps {
        if !embeddings.contains_key(h.query.as_str()) {
            embeddings.insert(h.query.as_str(), model.embed(&h.query)?);
        }
        let key = (h.query.clone(), h.utterance.clone());
        if !probs.contains_key(&key) {
            let doc = index.document(&h.utterance).ok_or_else(|| Error::OutsideUtterance {
                id: h.utterance.clone(),
                detail: "baseline hypothesis names an utterance that is not in the documents".into(),
            })?;
            probs.insert(key, (score_frames(doc, &embeddings[h.query.as_str()])?, doc.step_ms));
        }
    }
    let mut fused = fuse(
        &hyps,
        |q, u| {
            let (z, step) = &probs[&(q.to_string(), u.to_string())];
            Ok((z.as_slice(), *step))
        },
        gamma,
    )?;
    if scale {
        scale_fused(&mut fused, gamma);
    }
    write_hypotheses(&out.join(HYPOTHESES_FILE), &fused)?;
    echo(out, "rescore", s.seed.unwrap_or(DEFAULT_SEED), &st)
}

pub struct ScoreArgs {
    pub mode: ScoreMode,
    pub hypotheses: PathBuf,
    pub references: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub duration: Option<f64>,
    pub threshold: Option<f64>,
    pub kst: bool,
}

fn check_known<'a>(used: impl IntoIterator<Item = &'a str>, known: &BTreeSet<&str>) -> Result<()> {
    let unknown: BTreeSet<&str> = used.into_iter().filter(|q| !known.contains(q)).collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(UnknownQueries(unknown.into_iter().map(String::from).collect()).into())
    }
}

pub fn score(s: &Shared, a: &ScoreArgs) -> Result<()> {
    let st = resolve(s.config.as_deref(), &s.overrides)?.settings;
    let out = out_dir(s)?;
    let listed = a.queries.as_deref().map(read_queries).transpose()?.unwrap_or_default();
    let (report, summary) = match a.mode {
        ScoreMode::Twv => score_twv(&st, a, &listed, out)?,
        ScoreMode::Classification => score_trials(a, &listed)?,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    atomic_write(&out.join(REPORT_FILE), format!("{text}\n").as_bytes())?;
    println!("{summary}");
    echo(out, "score", s.seed.unwrap_or(DEFAULT_SEED), &st)
}

fn score_twv(st: &Settings, a: &ScoreArgs, listed: &[String], out: &Path) -> Result<(serde_json::Value, String)> {
    let Some(ref_path) = &a.references else {
        return Err(config_error("twv scoring needs --references".into()));
    };
    let Some(duration) = a.duration else {
        return Err(config_error("twv scoring needs --duration (seconds of searched audio)".into()));
    };
    if !(duration.is_finite() && duration > 0.0) {
        return Err(config_error(format!("--duration must be positive, got {duration}")));
    }
    let refs = References::new(read_references(ref_path)?, duration, listed);
    let mut hyps = read_hypotheses(&a.hypotheses)?;
    let known: BTreeSet<&str> = refs.queries.iter().map(String::as_str).collect();
    check_known(hyps.iter().map(|h| h.query.as_str()), &known)?;
    if a.kst {
        hyps = kst_normalize(&hyps, duration, st.twv.beta)?;
    }
    let alignment = align_hits(&hyps, &refs, st.twv.tolerance_ms);
    let sweep = mtwv_sweep(&alignment, &refs, &st.twv)?;
    let threshold = a.threshold.unwrap_or(sweep.threshold);
    let r = twv(&alignment, &refs, &st.twv, threshold)?;
    let mut det = String::new();
    for p in &sweep.det {
        det.push_str(&format!("{}\t{}\t{}\t{}\n", p.threshold, p.p_miss, p.p_fa, p.twv));
    }
    atomic_write(&out.join(DET_FILE), det.as_bytes())?;
    let per_query: Vec<_> = r
        .per_query
        .iter()
        .map(|q| {
            json!({
                "query": q.query, "ntrue": q.ntrue, "correct": q.correct,
                "false_alarms": q.false_alarms, "p_miss": q.p_miss, "p_fa": q.p_fa,
            })
        })
        .collect();
    let report = json!({
        "mode": "twv",
        "kst": a.kst,
        "duration_s": duration,
        "threshold": r.threshold,
        "twv": r.twv,
        "p_miss": r.p_miss,
        "p_fa": r.p_fa,
        "mtwv": sweep.mtwv,
        "mtwv_threshold": sweep.threshold,
        "excluded": r.excluded,
        "per_query": per_query,
    });
    let summary = match a.threshold {
        Some(t) => format!("ATWV {} at threshold {t} (MTWV {} at {})", r.twv, sweep.mtwv, sweep.threshold),
        None => format!("MTWV {} at threshold {}", sweep.mtwv, sweep.threshold),
    };
    Ok((report, summary))
}

fn score_trials(a: &ScoreArgs, listed: &[String]) -> Result<(serde_json::Value, String)> {
    if a.kst {
        return Err(config_error("--kst applies to twv scoring only".into()));
    }
    let trials = read_trials(&a.hypotheses)?;
    if !listed.is_empty() {
        let known: BTreeSet<&str> = listed.iter().map(String::as_str).collect();
        check_known(trials.iter().map(|(t, _)| t.query.as_str()), &known)?;
    }
    let threshold = a.threshold.unwrap_or(0.5);
    let labels: Vec<bool> = trials.iter().map(|(t, _)| t.positive).collect();
    let scores: Vec<f64> = trials.iter().map(|(_, s)| *s).collect();
    let (accuracy, auc) = accuracy_auc(&labels, &scores, threshold)?;
    let report = json!({
        "mode": "classification",
        "threshold": threshold,
        "trials": trials.len(),
        "positives": labels.iter().filter(|&&l| l).count(),
        "accuracy": accuracy,
        "auc": auc,
    });
    Ok((report, format!("accuracy {accuracy} AUC {auc} at threshold {threshold}")))
}

pub fn gradcheck(s: &Shared) -> Result<()> {
    let results = framekws::gradcheck::run_suite()?;
    let mut table = String::new();
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAILED" };
        table.push_str(&format!("{}\t{}\t{}\t{verdict}\n", r.name, r.entries, r.rel_error));
    }
    print!("{table}");
    if let Some(out) = &s.out {
        atomic_write(&out.join("gradcheck.tsv"), table.as_bytes())?;
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.passed()).map(|r| r.name.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(GradcheckFailed(failed).into())
    }
}
