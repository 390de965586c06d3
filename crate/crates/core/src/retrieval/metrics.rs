//! P@N, PBT@N and PTB@N.
//!
//! - P@N: share of questions with an answer-bearing document in the top N.
//! - PBT@N: share of questions where the reranker's top N holds an
//!   answer-bearing document that the TF-IDF top N lacks.
//! - PTB@N: the mirror image, TF-IDF top-N answer-bearing documents missing
//!   from the reranker's top N.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::RankedList;
use crate::error::{Error, Result};

/// Decides whether a document contains an answer to a question.
pub trait AnswerJudge {
    fn contains_answer(&self, question_id: &str, doc_id: &str) -> bool;
}

impl<F: Fn(&str, &str) -> bool> AnswerJudge for F {
    fn contains_answer(&self, question_id: &str, doc_id: &str) -> bool {
        self(question_id, doc_id)
    }
}

fn by_question(lists: &[RankedList]) -> HashMap<&str, &RankedList> {
    lists.iter().map(|l| (l.question_id.as_str(), l)).collect()
}

fn lookup<'a>(map: &HashMap<&str, &'a RankedList>, qid: &str) -> Result<&'a RankedList> {
    map.get(qid).copied().ok_or_else(|| Error::Coverage(qid.to_string()))
}

fn fraction(hits: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("metrics need at least one question"));
    }
    Ok(hits as f64 / total as f64)
}

pub fn p_at_n(lists: &[RankedList], question_ids: &[String], judge: &dyn AnswerJudge, n: usize) -> Result<f64> {
    let map = by_question(lists);
    let mut hits = 0;
    for qid in question_ids {
        let list = lookup(&map, qid)?;
        if list.top_n(n).iter().any(|e| judge.contains_answer(qid, &e.doc_id)) {
            hits += 1;
        }
    }
    fraction(hits, question_ids.len())
}

/// Share of questions where `primary`'s top N has an answer-bearing document
/// outside `reference`'s top N.
fn beyond_at_n(
    primary: &[RankedList],
    reference: &[RankedList],
    question_ids: &[String],
    judge: &dyn AnswerJudge,
    n: usize,
) -> Result<f64> {
    let p = by_question(primary);
    let r = by_question(reference);
    let mut hits = 0;
    for qid in question_ids {
        let top = lookup(&p, qid)?.top_n(n);
        let other: HashSet<&str> = lookup(&r, qid)?.top_n(n).iter().map(|e| e.doc_id.as_str()).collect();
        if top
            .iter()
            .any(|e| !other.contains(e.doc_id.as_str()) && judge.contains_answer(qid, &e.doc_id))
        {
            hits += 1;
        }
    }
    fraction(hits, question_ids.len())
}

pub fn pbt_at_n(
    reranked: &[RankedList],
    tfidf: &[RankedList],
    question_ids: &[String],
    judge: &dyn AnswerJudge,
    n: usize,
) -> Result<f64> {
    beyond_at_n(reranked, tfidf, question_ids, judge, n)
}

pub fn ptb_at_n(
    reranked: &[RankedList],
    tfidf: &[RankedList],
    question_ids: &[String],
    judge: &dyn AnswerJudge,
    n: usize,
) -> Result<f64> {
    beyond_at_n(tfidf, reranked, question_ids, judge, n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub question_count: usize,
    pub n_values: Vec<usize>,
    /// Keyed `P@N`, `PBT@N`, `PTB@N`.
    pub metrics: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn get(&self, metric: &str, n: usize) -> Option<f64> {
        self.metrics.get(&format!("{metric}@{n}")).copied()
    }
}

pub fn evaluate(
    reranked: &[RankedList],
    tfidf: &[RankedList],
    question_ids: &[String],
    judge: &dyn AnswerJudge,
    n_values: &[usize],
) -> Result<MetricsReport> {
    let mut metrics = BTreeMap::new();
    for &n in n_values {
        metrics.insert(format!("P@{n}"), p_at_n(reranked, question_ids, judge, n)?);
        metrics.insert(format!("PBT@{n}"), pbt_at_n(reranked, tfidf, question_ids, judge, n)?);
        metrics.insert(format!("PTB@{n}"), ptb_at_n(reranked, tfidf, question_ids, judge, n)?);
    }
    Ok(MetricsReport {
        question_count: question_ids.len(),
        n_values: n_values.to_vec(),
        metrics,
    })
}
