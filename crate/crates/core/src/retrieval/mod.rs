//! First-stage lexical retrieval, ranked lists, and ranking metrics.

mod lists;
pub mod metrics;
mod tfidf;

pub use lists::{read_tsv, write_tsv, ListSource, RankedEntry, RankedList};
pub use metrics::{evaluate, p_at_n, pbt_at_n, ptb_at_n, AnswerJudge, MetricsReport};
pub use tfidf::{build_index, idf, ngrams, TfidfIndex};
