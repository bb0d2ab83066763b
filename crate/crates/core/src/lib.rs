//! Second-stage review of field values extracted from noisy call
//! transcripts.
//!
//! Pipeline: isolate the utterances that carry a field, optionally correct
//! them from their n-best alternatives, then approve or flag the live-call
//! value by verification or by re-extraction.

pub mod correction;
pub mod error;
pub mod eval;
pub mod extraction;
pub mod isolation;
pub mod lexicon;
pub mod logistic;
pub mod model;
pub mod pipeline;
pub mod pseudolabel;
pub mod review;
pub mod simulator;
pub mod spoken;

pub use error::{Error, Result};
pub use model::*;
