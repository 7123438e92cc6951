//! Frame-level neural keyword search.
//!
//! A query encoder maps a symbol sequence to a vector; a document encoder
//! maps acoustic feature frames to one vector per (downsampled) frame. The
//! sigmoid of their dot product is the probability that the query occurs
//! at that frame. The crate covers training both encoders from word
//! alignments, turning frame probabilities into scored hits, and scoring
//! hits with the term-weighted value suite.

pub mod encoders;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod nn;
pub mod search;
pub mod synth;
pub mod training;

mod error;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/encoders.md")]
    mod encoders {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
