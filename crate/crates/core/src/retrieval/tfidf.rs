//! Unigram+bigram TF-IDF with cosine scoring.
//!
//! Term weight is `ln(1 + tf) · idf` with
//! `idf = ln(1 + (N - df + 0.5) / (df + 0.5))`, clamped at zero.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::data::Document;
use crate::error::{Error, Result};
use crate::retrieval::{ListSource, RankedList};
use crate::text::word_tokens;

pub fn idf(n_docs: usize, df: usize) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln().max(0.0)
}

/// Unigrams followed by space-joined bigrams.
pub fn ngrams(tokens: &[String]) -> Vec<String> {
    let mut out: Vec<String> = tokens.to_vec();
    out.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    out
}

fn term_counts(text: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for g in ngrams(&word_tokens(text)) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

fn tf_weight(tf: usize) -> f64 {
    (1.0 + tf as f64).ln()
}

#[derive(Clone, Debug)]
pub struct TfidfIndex {
    doc_ids: Vec<String>,
    postings: HashMap<String, Vec<(u32, f64)>>,
    idf: HashMap<String, f64>,
    norms: Vec<f64>,
}

pub fn build_index(docs: &[Document]) -> Result<TfidfIndex> {
    if docs.is_empty() {
        return Err(Error::invalid("cannot index an empty corpus"));
    }
    let mut seen = HashSet::with_capacity(docs.len());
    if let Some(d) = docs.iter().find(|d| !seen.insert(d.id.as_str())) {
        return Err(Error::DuplicateKey(format!("document id {}", d.id)));
    }

    let counts: Vec<BTreeMap<String, usize>> = docs.iter().map(|d| term_counts(&d.full_text())).collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for c in &counts {
        for term in c.keys() {
            *df.entry(term.as_str()).or_insert(0) += 1;
        }
    }
    let idf_map: HashMap<String, f64> = df
        .iter()
        .map(|(t, &n)| (t.to_string(), idf(docs.len(), n)))
        .collect();

    let mut postings: HashMap<String, Vec<(u32, f64)>> = HashMap::new();
    let mut norms = Vec::with_capacity(docs.len());
    for (i, c) in counts.iter().enumerate() {
        let mut sq = 0.0;
        for (term, &tf) in c {
            let w = tf_weight(tf) * idf_map[term];
            sq += w * w;
            postings.entry(term.clone()).or_default().push((i as u32, w));
        }
        norms.push(sq.sqrt());
    }
    Ok(TfidfIndex {
        doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
        postings,
        idf: idf_map,
        norms,
    })
}

impl TfidfIndex {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    /// Cosine similarity of `text` against every document sharing a term.
    pub fn scores(&self, text: &str) -> Vec<(String, f64)> {
        let mut query = Vec::new();
        let mut q_sq = 0.0;
        for (term, tf) in term_counts(text) {
            if let Some(&idf) = self.idf.get(&term) {
                let w = tf_weight(tf) * idf;
                q_sq += w * w;
                query.push((term, w));
            }
        }
        if q_sq == 0.0 {
            return Vec::new();
        }
        let q_norm = q_sq.sqrt();
        let mut dots = vec![0.0f64; self.doc_ids.len()];
        let mut touched = vec![false; self.doc_ids.len()];
        for (term, wq) in &query {
            for &(doc, wd) in &self.postings[term] {
                dots[doc as usize] += wq * wd;
                touched[doc as usize] = true;
            }
        }
        (0..self.doc_ids.len())
            .filter(|&i| touched[i] && self.norms[i] > 0.0)
            .map(|i| (self.doc_ids[i].clone(), dots[i] / (q_norm * self.norms[i])))
            .filter(|(_, s)| *s > 0.0)
            .collect()
    }

    /// Top `n` documents by cosine score, ties by ascending id.
    pub fn retrieve(&self, question_id: &str, text: &str, n: usize) -> Result<RankedList> {
        if n == 0 {
            return Err(Error::invalid("retrieval depth must be at least 1"));
        }
        let mut list = RankedList::from_scores(question_id, self.scores(text), ListSource::Tfidf)?;
        list.entries.truncate(n);
        Ok(list)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            title: String::new(),
            text: text.into(),
        }
    }

    #[test]
    fn single_document() {
        let idx = build_index(&[doc("a", "the quick fox")]).unwrap();
        let l = idx.retrieve("q", "a fox", 5).unwrap();
        assert_eq!(l.doc_ids().collect::<Vec<_>>(), ["a"]);
        assert!(l.entries[0].score > 0.0);
    }

    #[test]
    fn out_of_vocabulary_query_is_empty() {
        let idx = build_index(&[doc("a", "the quick fox"), doc("b", "lazy dog")]).unwrap();
        assert!(idx.retrieve("q", "zebra unicorn", 5).unwrap().is_empty());
    }

    #[test]
    fn identical_documents_tie_by_id() {
        let idx = build_index(&[doc("z", "red apple"), doc("m", "red apple"), doc("a", "red apple"), doc("x", "blue")])
            .unwrap();
        let l = idx.retrieve("q", "red apple", 10).unwrap();
        assert_eq!(l.doc_ids().collect::<Vec<_>>(), ["a", "m", "z"]);
        assert_eq!(l, idx.retrieve("q", "red apple", 10).unwrap());
        assert_eq!(idx.retrieve("q", "red apple", 2).unwrap().len(), 2);
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(matches!(build_index(&[doc("a", "x"), doc("a", "y")]), Err(Error::DuplicateKey(_))));
        assert!(build_index(&[]).is_err());
    }

    #[test]
    fn idf_is_positive_and_decreasing() {
        assert!(idf(10, 1) > idf(10, 5));
        assert!(idf(10, 10) > 0.0);
    }
}
