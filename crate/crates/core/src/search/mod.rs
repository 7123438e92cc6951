//! Turning frame probabilities into decisions: segment scores, decoded
//! hits, rescored baseline hits, and a precomputed document index.

mod decode;
mod index;
mod rescore;

pub use decode::{classify_segment, decode_hits, decode_islands, median, Aggregator, DecodeConfig, Island};
pub use index::{DocumentIndex, INDEX_MAGIC, INDEX_VERSION};
pub use rescore::{frame_interval, rescore, scale_fused};

/// A scored time span for one query in one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub query: String,
    pub utterance: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub score: f64,
}

impl Hypothesis {
    pub fn midpoint_ms(&self) -> f64 {
        (self.start_ms + self.end_ms) as f64 / 2.0
    }
}
