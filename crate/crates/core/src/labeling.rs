//! Distant supervision: a retrieved document is a positive example for a
//! question iff its normalized text contains one of the normalized answers
//! as a contiguous token span.

use std::collections::{BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Question};
use crate::digest::Digest64;
use crate::error::{Error, Result};
use crate::retrieval::{AnswerJudge, RankedList};
use crate::text::{contains_token_span, word_tokens};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingExample {
    pub question_id: String,
    pub doc_id: String,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelConfig {
    /// Negatives kept per positive; `None` keeps every negative.
    pub negative_ratio: Option<usize>,
    pub seed: u64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            negative_ratio: Some(4),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledSet {
    pub examples: Vec<TrainingExample>,
    /// Questions dropped because they have no answer strings.
    pub skipped_questions: usize,
}

/// Normalized answers and document tokens, precomputed for matching.
pub struct AnswerMatcher {
    answers: HashMap<String, Vec<Vec<String>>>,
    docs: HashMap<String, Vec<String>>,
}

impl AnswerMatcher {
    pub fn new(questions: &[Question], corpus: &Corpus) -> Self {
        Self {
            answers: questions
                .iter()
                .map(|q| (q.id.clone(), q.answers.iter().map(|a| word_tokens(a)).collect()))
                .collect(),
            docs: corpus
                .docs()
                .iter()
                .map(|d| (d.id.clone(), word_tokens(&d.full_text())))
                .collect(),
        }
    }
}

impl AnswerJudge for AnswerMatcher {
    fn contains_answer(&self, question_id: &str, doc_id: &str) -> bool {
        match (self.answers.get(question_id), self.docs.get(doc_id)) {
            (Some(answers), Some(doc)) => answers.iter().any(|a| contains_token_span(doc, a)),
            _ => false,
        }
    }
}

fn question_seed(seed: u64, question_id: &str) -> u64 {
    let mut d = Digest64::new("negatives");
    d.u64(seed).bytes(question_id.as_bytes());
    d.finish()
}

pub fn label_examples(
    questions: &[Question],
    lists: &[RankedList],
    corpus: &Corpus,
    cfg: &LabelConfig,
) -> Result<LabeledSet> {
    let matcher = AnswerMatcher::new(questions, corpus);
    let by_q: HashMap<&str, &RankedList> = lists.iter().map(|l| (l.question_id.as_str(), l)).collect();
    let mut out = LabeledSet::default();
    for q in questions {
        if q.answers.iter().all(|a| word_tokens(a).is_empty()) {
            log::warn!("question {} has no usable answer strings; skipped", q.id);
            out.skipped_questions += 1;
            continue;
        }
        let Some(list) = by_q.get(q.id.as_str()) else {
            continue;
        };
        let mut labels = Vec::with_capacity(list.len());
        for id in list.doc_ids() {
            if corpus.get(id).is_none() {
                return Err(Error::invalid(format!("retrieved document {id} is not in the corpus")));
            }
            labels.push((id, u8::from(matcher.contains_answer(&q.id, id))));
        }
        let positives = labels.iter().filter(|(_, y)| *y == 1).count();
        // Sampling works on the id-sorted negatives so the outcome does not
        // depend on retrieval order.
        let negatives: BTreeSet<&str> = labels.iter().filter(|(_, y)| *y == 0).map(|(id, _)| *id).collect();
        let keep: BTreeSet<&str> = match cfg.negative_ratio {
            Some(r) if negatives.len() > r * positives => {
                let pool: Vec<&str> = negatives.into_iter().collect();
                let mut rng = ChaCha8Rng::seed_from_u64(question_seed(cfg.seed, &q.id));
                sample(&mut rng, pool.len(), r * positives)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect()
            }
            _ => negatives,
        };
        out.examples.extend(
            labels
                .into_iter()
                .filter(|(id, y)| *y == 1 || keep.contains(id))
                .map(|(id, label)| TrainingExample {
                    question_id: q.id.clone(),
                    doc_id: id.to_string(),
                    label,
                }),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Document;
    use crate::retrieval::ListSource;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            title: String::new(),
            text: text.into(),
        }
    }

    fn question(id: &str, answers: &[&str]) -> Question {
        Question {
            id: id.into(),
            question: "where?".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn ranked(qid: &str, ids: &[&str]) -> RankedList {
        RankedList::from_scores(
            qid,
            ids.iter().enumerate().map(|(i, d)| (d.to_string(), 100.0 - i as f64)).collect(),
            ListSource::Tfidf,
        )
        .unwrap()
    }

    #[test]
    fn normalization_and_token_boundaries() {
        let corpus = Corpus::new(vec![doc("a", "... in Paris, France ..."), doc("b", "newton yorkshire")]).unwrap();
        let qs = [question("q1", &["paris"]), question("q2", &["new york"])];
        let lists = [ranked("q1", &["a"]), ranked("q2", &["b"])];
        let cfg = LabelConfig {
            negative_ratio: None,
            seed: 0,
        };
        let set = label_examples(&qs, &lists, &corpus, &cfg).unwrap();
        let labels: Vec<u8> = set.examples.iter().map(|e| e.label).collect();
        assert_eq!(labels, [1, 0]);
    }

    #[test]
    fn negatives_are_downsampled_deterministically() {
        let mut docs = vec![doc("pos", "the answer is here")];
        docs.extend((0..20).map(|i| doc(&format!("n{i:02}"), "nothing to see")));
        let corpus = Corpus::new(docs).unwrap();
        let ids: Vec<String> = corpus.docs().iter().map(|d| d.id.clone()).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let qs = [question("q", &["answer"])];
        let cfg = LabelConfig {
            negative_ratio: Some(4),
            seed: 11,
        };
        let a = label_examples(&qs, &[ranked("q", &id_refs)], &corpus, &cfg).unwrap();
        assert_eq!(a.examples.iter().filter(|e| e.label == 1).count(), 1);
        assert_eq!(a.examples.iter().filter(|e| e.label == 0).count(), 4);
        let b = label_examples(&qs, &[ranked("q", &id_refs)], &corpus, &cfg).unwrap();
        assert_eq!(a, b);

        let mut rev = id_refs.clone();
        rev.reverse();
        let c = label_examples(&qs, &[ranked("q", &rev)], &corpus, &cfg).unwrap();
        let set = |s: &LabeledSet| s.examples.iter().cloned().collect::<std::collections::HashSet<_>>();
        assert_eq!(set(&a), set(&c));
    }

    #[test]
    fn empty_answers_are_skipped() {
        let corpus = Corpus::new(vec![doc("a", "x")]).unwrap();
        let set = label_examples(&[question("q", &[])], &[ranked("q", &["a"])], &corpus, &LabelConfig::default()).unwrap();
        assert_eq!(set.skipped_questions, 1);
        assert!(set.examples.is_empty());
    }

    #[test]
    fn unknown_document_is_invalid() {
        let corpus = Corpus::new(vec![doc("a", "x")]).unwrap();
        let err = label_examples(&[question("q", &["x"])], &[ranked("q", &["zzz"])], &corpus, &LabelConfig::default());
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }
}
