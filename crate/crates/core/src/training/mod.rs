//! Training data, the margin-masked objective and the optimization loop.

mod corpus;
mod labels;
mod loss;
mod phrases;
mod sampler;
mod train;

pub use corpus::{AlignedWord, SymbolInventory, TrainingCorpus, Utterance};
pub use labels::{make_labels, phrase_labels, span_frames};
pub use loss::{margin_loss, margin_loss_logits, LossConfig};
pub use phrases::{extract_phrases, phrase_tokens, Phrase, Span};
pub use sampler::{sample_batch, Group, SamplerConfig};
pub use train::{
    batch_forward, evaluate_loss, train, BatchForward, EpochLog, Resume, Schedule, TrainConfig,
    TrainOutcome, TrainingData,
};
