use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ListSource {
    Tfidf,
    Reranker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Documents for one question, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub question_id: String,
    pub entries: Vec<RankedEntry>,
    pub source: ListSource,
}

impl RankedList {
    pub fn new(question_id: impl Into<String>, entries: Vec<RankedEntry>, source: ListSource) -> Result<Self> {
        let question_id = question_id.into();
        let mut seen = HashSet::with_capacity(entries.len());
        if let Some(dup) = entries.iter().find(|e| !seen.insert(e.doc_id.as_str())) {
            return Err(Error::DuplicateKey(format!(
                "document {} listed twice for question {question_id}",
                dup.doc_id
            )));
        }
        Ok(Self {
            question_id,
            entries,
            source,
        })
    }

    /// Builds a list from `(doc_id, score)` pairs sorted by descending score,
    /// ties broken by ascending doc id.
    pub fn from_scores(
        question_id: impl Into<String>,
        mut scored: Vec<(String, f64)>,
        source: ListSource,
    ) -> Result<Self> {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::new(
            question_id,
            scored
                .into_iter()
                .map(|(doc_id, score)| RankedEntry { doc_id, score })
                .collect(),
            source,
        )
    }

    pub fn top_n(&self, n: usize) -> &[RankedEntry] {
        &self.entries[..n.min(self.entries.len())]
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

const HASH_PREFIX: &str = "# config_hash=";

/// Writes `question_id \t rank \t doc_id \t score` rows (rank from 1),
/// preceded by a provenance comment line.
pub fn write_tsv(path: &Path, lists: &[RankedList], config_hash: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{HASH_PREFIX}{config_hash}")?;
    for list in lists {
        for (rank, e) in list.entries.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}\t{}", list.question_id, rank + 1, e.doc_id, e.score)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads lists written by [`write_tsv`]; returns the provenance hash if present.
pub fn read_tsv(path: &Path, source: ListSource) -> Result<(Option<String>, Vec<RankedList>)> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut hash = None;
    let mut lists: Vec<RankedList> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let schema_err = |message: String| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if let Some(h) = line.strip_prefix(HASH_PREFIX) {
            hash = Some(h.trim().to_string());
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [qid, rank, doc_id, score] = cols[..] else {
            return Err(schema_err(format!("expected 4 tab-separated fields, found {}", cols.len())));
        };
        let rank: usize = rank.parse().map_err(|_| schema_err(format!("bad rank {rank:?}")))?;
        let score: f64 = score.parse().map_err(|_| schema_err(format!("bad score {score:?}")))?;
        let entry = RankedEntry {
            doc_id: doc_id.to_string(),
            score,
        };
        match lists.last_mut() {
            Some(l) if l.question_id == qid => {
                if rank != l.entries.len() + 1 {
                    return Err(schema_err(format!("rank {rank} out of sequence")));
                }
                if l.entries.iter().any(|e| e.doc_id == doc_id) {
                    return Err(schema_err(format!("duplicate document {doc_id}")));
                }
                l.entries.push(entry);
            }
            _ => {
                if rank != 1 {
                    return Err(schema_err(format!("list for {qid} starts at rank {rank}")));
                }
                if lists.iter().any(|l| l.question_id == qid) {
                    return Err(schema_err(format!("question {qid} appears in two blocks")));
                }
                lists.push(RankedList::new(qid, vec![entry], source)?);
            }
        }
    }
    Ok((hash, lists))
}
