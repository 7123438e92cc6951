//! Query encoder, document encoder and the frame-scoring head.
//!
//! A query (symbol indices) becomes one vector `e_q`; an utterance becomes a
//! matrix `H_X` with one row per downsampled frame. The occurrence
//! probability at frame `n` is `sigmoid(H_X[n] . e_q)`.

mod config;
mod model;
mod store;

pub use config::{ModelConfig, FRAME_STEP_MS};
pub use model::{
    encode_document, encode_documents, encode_query, score_frames, DocumentEncoding, ModelGraph,
    Phase, QueryEmbedding,
};
pub use store::{load_adam, save_adam, ParameterStore, PARAM_MAGIC, PARAM_VERSION};
