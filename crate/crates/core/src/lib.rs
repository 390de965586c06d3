//! Passage reranking with independently encoded questions and documents.
//!
//! Documents are encoded once, offline, and their encodings cached; at query
//! time only the question is encoded and a shallow interaction stack scores
//! each (question, document) pair. A concatenated-input baseline, TF-IDF
//! first-stage retrieval, ranking metrics and a cost benchmark are included.

pub mod bench;
pub mod cache;
pub mod classifier;
pub mod codec;
pub mod config;
pub mod data;
pub mod digest;
pub mod encoder;
pub mod error;
pub mod interaction;
pub mod labeling;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod rerank;
pub mod retrieval;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
