//! Corpus and question records and their JSON-lines files.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

impl Document {
    /// Title and body joined; this is what gets encoded, indexed and matched.
    pub fn full_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
}

/// Documents with unique ids, in file order.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.id.clone(), i).is_some() {
                return Err(Error::DuplicateKey(format!("document id {}", d.id)));
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }
}

fn parse_jsonl<T: DeserializeOwned>(path: &Path, validate: impl Fn(&T) -> Option<String>) -> Result<Vec<T>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema_err = |message: String| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: T = serde_json::from_str(&line).map_err(|e| schema_err(e.to_string()))?;
        if let Some(msg) = validate(&rec) {
            return Err(schema_err(msg));
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            line: 0,
            message: "no records".into(),
        });
    }
    Ok(out)
}

/// Reads `{"id", "title", "text"}` records.
pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    parse_jsonl(path, |d: &Document| d.id.is_empty().then(|| "empty field `id`".to_string()))
}

/// Reads `{"id", "question", "answers": [..]}` records.
pub fn read_questions(path: &Path) -> Result<Vec<Question>> {
    parse_jsonl(path, |q: &Question| {
        if q.id.is_empty() {
            Some("empty field `id`".into())
        } else if q.question.trim().is_empty() {
            Some("empty field `question`".into())
        } else {
            None
        }
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_ids_are_rejected() {
        let d = Document {
            id: "a".into(),
            title: String::new(),
            text: "x".into(),
        };
        assert!(matches!(Corpus::new(vec![d.clone(), d]), Err(Error::DuplicateKey(_))));
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, "{\"id\":\"a\",\"title\":\"\",\"text\":\"t\"}\n{\"title\":\"\",\"text\":\"t\"}\n").unwrap();
        match read_corpus(&p).unwrap_err() {
            Error::Schema { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("id"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
        std::fs::write(&p, "").unwrap();
        assert!(read_corpus(&p).unwrap_err().to_string().contains("no records"));
    }
}
