//! `framekws`: synthetic corpora, training, indexing, search, rescoring and
//! scoring as separate file-to-file commands.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "framekws", version, about = "Frame-level neural keyword search")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Shared {
    /// TOML settings file, layered over the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Single setting override such as `schedule.max_epochs=20`; repeatable
    /// and applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

/// Where documents come from: a saved index, or a corpus split encoded on
/// the fly.
#[derive(Args, Clone, Debug)]
pub struct Documents {
    /// Index file written by `index`.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Corpus directory written by `synth` (or laid out the same way).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Split of the corpus to use.
    #[arg(long, default_value = "dev")]
    pub split: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScoreMode {
    Twv,
    Classification,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with IV/OOV query lists and references.
    Synth,
    /// Train a model on the `train` split of a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Continue from the parameters, optimizer state and log in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Encode every utterance of a split into an index file.
    Index {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// Decode hits for every query of a list.
    Search {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        docs: Documents,
        /// One query per line.
        #[arg(long)]
        queries: PathBuf,
    },
    /// Score balanced one-second segment trials.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        docs: Documents,
        #[arg(long)]
        queries: PathBuf,
    },
    /// Fuse baseline hypothesis scores with network frame probabilities.
    Rescore {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        docs: Documents,
        /// Baseline hypotheses in the standard tab-separated format.
        #[arg(long)]
        baseline: PathBuf,
        /// Weight of the baseline score.
        #[arg(long)]
        gamma: f64,
        /// Divide fused scores by `1 + gamma` so they stay in [0, 1].
        #[arg(long)]
        scale: bool,
    },
    /// Compute TWV or classification metrics.
    Score {
        #[arg(long, value_enum, default_value = "twv")]
        mode: ScoreMode,
        /// Hypotheses (twv mode) or scored trials (classification mode).
        #[arg(long)]
        hypotheses: PathBuf,
        /// Reference occurrences (twv mode).
        #[arg(long)]
        references: Option<PathBuf>,
        /// Full query list; queries without occurrences still count as
        /// known.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Searched audio in seconds (twv mode).
        #[arg(long)]
        duration: Option<f64>,
        /// Fixed decision threshold; without it twv mode sweeps for the
        /// maximum and classification mode uses 0.5.
        #[arg(long)]
        threshold: Option<f64>,
        /// Apply keyword-specific score normalization first.
        #[arg(long)]
        kst: bool,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::init_threads(cli.shared.threads).and_then(|_| {
        let s = &cli.shared;
        match cli.command {
            Command::Synth => commands::synth(s),
            Command::Train { corpus, resume } => commands::train(s, &corpus, resume),
            Command::Index { model, corpus, split } => commands::index(s, &model, &corpus, &split),
            Command::Search { model, docs, queries } => commands::search(s, &model, &docs, &queries),
            Command::Classify { model, docs, queries } => commands::classify(s, &model, &docs, &queries),
            Command::Rescore {
                model,
                docs,
                baseline,
                gamma,
                scale,
            } => commands::rescore(s, &model, &docs, &baseline, gamma, scale),
            Command::Score {
                mode,
                hypotheses,
                references,
                queries,
                duration,
                threshold,
                kst,
            } => commands::score(
                s,
                &commands::ScoreArgs {
                    mode,
                    hypotheses,
                    references,
                    queries,
                    duration,
                    threshold,
                    kst,
                },
            ),
            Command::Gradcheck => commands::gradcheck(s),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
