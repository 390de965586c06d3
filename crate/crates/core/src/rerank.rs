//! Second-stage reranking of first-stage candidates.
//!
//! - `cached`: encode the question, read document encodings from the cache.
//! - `fresh`: encode the question and every candidate document on the fly.
//! - `concat`: run the joint encoder over every (question, document) pair.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cache::{CacheKey, EncodingCache};
use crate::classifier::probability;
use crate::config::Architecture;
use crate::data::{write_jsonl, Corpus, Question};
use crate::encoder::{tokenize, Role, TokenSequence};
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::retrieval::{ListSource, RankedEntry, RankedList};
use crate::tensor::OpCounters;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    Cached,
    Fresh,
    Concat,
}

impl RerankMode {
    /// The mode a model of `arch` is served with by default.
    pub fn default_for(arch: Architecture) -> Self {
        match arch {
            Architecture::Concat => Self::Concat,
            _ => Self::Cached,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cached => "cached",
            Self::Fresh => "fresh",
            Self::Concat => "concat",
        }
    }
}

/// Counters split by stage. Concat mode has no separate interaction stage;
/// its joint encoder is counted under `encode`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounters {
    pub encode: OpCounters,
    pub interaction: OpCounters,
}

impl StageCounters {
    pub fn total(&self) -> OpCounters {
        self.encode + self.interaction
    }
}

impl std::ops::AddAssign for StageCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.encode += rhs.encode;
        self.interaction += rhs.interaction;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub probability: f32,
    pub logit: f32,
    /// 1-based rank in the first-stage list.
    pub first_stage_rank: usize,
}

/// One line of the rerank output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankOutput {
    pub question_id: String,
    pub mode: RerankMode,
    pub config_hash: String,
    pub model_hash: String,
    pub results: Vec<ScoredDoc>,
    pub counters: StageCounters,
}

impl RerankOutput {
    pub fn ranked_list(&self) -> Result<RankedList> {
        RankedList::new(
            self.question_id.clone(),
            self.results
                .iter()
                .map(|r| RankedEntry {
                    doc_id: r.doc_id.clone(),
                    score: r.logit as f64,
                })
                .collect(),
            ListSource::Reranker,
        )
    }
}

pub struct RerankOutcome {
    pub output: RerankOutput,
    pub elapsed: Duration,
}

/// Read-only state shared by every rerank call.
pub struct Reranker<'a> {
    checkpoint: &'a Checkpoint,
    cache: Option<&'a EncodingCache>,
    documents: HashMap<&'a str, Option<TokenSequence>>,
    config_hash: String,
    model_hash: String,
    threads: usize,
}

impl<'a> Reranker<'a> {
    /// Tokenizes the corpus once. Documents that are empty after
    /// normalization are kept as known ids that cannot be scored.
    pub fn new(checkpoint: &'a Checkpoint, corpus: &'a Corpus, cache: Option<&'a EncodingCache>) -> Self {
        let ld = checkpoint.config.model.max_document_len;
        let documents = corpus
            .docs()
            .iter()
            .map(|d| {
                let seq = tokenize(&d.full_text(), Role::Document, &checkpoint.vocab, ld).ok();
                (d.id.as_str(), seq)
            })
            .collect();
        Self {
            checkpoint,
            cache,
            documents,
            config_hash: checkpoint.config.config_hash(),
            model_hash: format!("{:016x}", checkpoint.model_hash()),
            threads: 1,
        }
    }

    /// Scores candidates on `threads` workers. Results do not depend on the
    /// worker count.
    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    pub fn tokenize_question(&self, text: &str) -> Result<TokenSequence> {
        tokenize(
            text,
            Role::Question,
            &self.checkpoint.vocab,
            self.checkpoint.config.model.max_question_len,
        )
    }

    fn document(&self, id: &str) -> Result<&TokenSequence> {
        match self.documents.get(id) {
            None => Err(Error::invalid(format!("unknown document id {id}"))),
            Some(None) => Err(Error::invalid(format!("document {id} is empty after normalization"))),
            Some(Some(seq)) => Ok(seq),
        }
    }

    fn check_mode(&self, mode: RerankMode) -> Result<()> {
        let arch = self.checkpoint.config.model.arch;
        match (mode, arch) {
            (RerankMode::Concat, Architecture::Concat) => Ok(()),
            (RerankMode::Cached | RerankMode::Fresh, Architecture::Decoupled | Architecture::DecoupledLinear) => Ok(()),
            _ => Err(Error::invalid(format!(
                "mode {} cannot serve a model trained with arch {arch:?}",
                mode.name()
            ))),
        }
    }

    /// Reranks `candidates` and keeps the best `top_k`.
    pub fn rerank(
        &self,
        question_id: &str,
        question: &TokenSequence,
        candidates: &[&str],
        mode: RerankMode,
        top_k: usize,
    ) -> Result<RerankOutcome> {
        self.check_mode(mode)?;
        self.rerank_unchecked(question_id, question, candidates, mode, top_k)
    }

    /// As [`Self::rerank`] without the architecture check; the benchmark
    /// times every mode on one parameter set.
    pub fn rerank_unchecked(
        &self,
        question_id: &str,
        question: &TokenSequence,
        candidates: &[&str],
        mode: RerankMode,
        top_k: usize,
    ) -> Result<RerankOutcome> {
        if top_k == 0 {
            return Err(Error::invalid("top_k must be positive"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(d) = candidates.iter().find(|d| !seen.insert(**d)) {
            return Err(Error::DuplicateKey(format!("candidate {d} listed twice")));
        }
        for id in candidates {
            self.document(id)?;
        }
        let params = &self.checkpoint.params;
        let arch = match self.checkpoint.config.model.arch {
            Architecture::Concat => Architecture::Decoupled,
            a => a,
        };
        let mut counters = StageCounters::default();

        // Every miss is reported before any scoring happens.
        if mode == RerankMode::Cached {
            let cache = self
                .cache
                .ok_or_else(|| Error::invalid("cached mode needs an encoding cache"))?;
            let hash = params.document_hash();
            let missing: Vec<CacheKey> = candidates
                .iter()
                .map(|id| CacheKey::new(*id, hash))
                .filter(|k| !cache.contains(k))
                .collect();
            if !missing.is_empty() {
                return Err(Error::CacheMiss { keys: missing });
            }
        }

        let start = Instant::now();
        let logits: Vec<f32> = match mode {
            RerankMode::Concat => self.map_candidates(candidates, |id, c| {
                params.concat_logit(question, self.document(id)?, &mut c.encode)
            }, &mut counters)?,
            RerankMode::Cached | RerankMode::Fresh => {
                let q = params.question_encoder.encode(question, &mut counters.encode)?;
                self.map_candidates(candidates, |id, c| {
                    let d = match mode {
                        RerankMode::Cached => {
                            let cache = self.cache.expect("checked above");
                            cache.get(&CacheKey::new(id, params.document_hash()))?
                        }
                        _ => params.document_encoder.encode(self.document(id)?, &mut c.encode)?,
                    };
                    params.decoupled_logit(arch, &q, &d, &mut c.interaction)
                }, &mut counters)?
            }
        };
        let elapsed = start.elapsed();

        let mut results: Vec<ScoredDoc> = candidates
            .iter()
            .zip(&logits)
            .enumerate()
            .map(|(i, (id, &logit))| ScoredDoc {
                doc_id: id.to_string(),
                probability: probability(logit),
                logit,
                first_stage_rank: i + 1,
            })
            .collect();
        results.sort_by(compare_scored);
        results.truncate(top_k);
        Ok(RerankOutcome {
            output: RerankOutput {
                question_id: question_id.to_string(),
                mode,
                config_hash: self.config_hash.clone(),
                model_hash: self.model_hash.clone(),
                results,
                counters,
            },
            elapsed,
        })
    }

    /// Applies `score` to every candidate, in order, possibly on several
    /// workers. Per-worker counters are summed into `total`.
    fn map_candidates<F>(&self, candidates: &[&str], score: F, total: &mut StageCounters) -> Result<Vec<f32>>
    where
        F: Fn(&str, &mut StageCounters) -> Result<f32> + Sync,
    {
        if self.threads == 1 || candidates.len() < 2 {
            return candidates.iter().map(|id| score(id, total)).collect();
        }
        let chunk = candidates.len().div_ceil(self.threads);
        let parts: Vec<Result<(Vec<f32>, StageCounters)>> = std::thread::scope(|s| {
            let handles: Vec<_> = candidates
                .chunks(chunk)
                .map(|part| {
                    let score = &score;
                    s.spawn(move || {
                        let mut c = StageCounters::default();
                        let v = part.iter().map(|id| score(id, &mut c)).collect::<Result<Vec<_>>>()?;
                        Ok((v, c))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("rerank worker panicked")).collect()
        });
        let mut out = Vec::with_capacity(candidates.len());
        for p in parts {
            let (v, c) = p?;
            out.extend(v);
            *total += c;
        }
        Ok(out)
    }
}

/// Logit descending, then first-stage rank, then doc id.
fn compare_scored(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.logit
        .total_cmp(&a.logit)
        .then(a.first_stage_rank.cmp(&b.first_stage_rank))
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Reranks every question's first-stage list.
pub fn rerank_all(
    reranker: &Reranker<'_>,
    questions: &[Question],
    lists: &[RankedList],
    mode: RerankMode,
    top_k: usize,
) -> Result<Vec<RerankOutput>> {
    let by_q: HashMap<&str, &RankedList> = lists.iter().map(|l| (l.question_id.as_str(), l)).collect();
    let mut out = Vec::with_capacity(questions.len());
    let mut misses = Vec::new();
    for q in questions {
        let list = by_q.get(q.id.as_str()).ok_or_else(|| Error::Coverage(q.id.clone()))?;
        let candidates: Vec<&str> = list.doc_ids().collect();
        if candidates.is_empty() {
            out.push(RerankOutput {
                question_id: q.id.clone(),
                mode,
                config_hash: reranker.config_hash.clone(),
                model_hash: reranker.model_hash.clone(),
                results: Vec::new(),
                counters: StageCounters::default(),
            });
            continue;
        }
        let seq = reranker.tokenize_question(&q.question)?;
        match reranker.rerank(&q.id, &seq, &candidates, mode, top_k) {
            Ok(o) => out.push(o.output),
            // Collect every missing key before failing.
            Err(Error::CacheMiss { keys }) => misses.extend(keys),
            Err(e) => return Err(e),
        }
    }
    if !misses.is_empty() {
        misses.sort();
        misses.dedup();
        return Err(Error::CacheMiss { keys: misses });
    }
    Ok(out)
}

pub fn write_outputs(path: &Path, outputs: &[RerankOutput]) -> Result<()> {
    write_jsonl(path, outputs)
}

pub fn read_outputs(path: &Path) -> Result<Vec<RerankOutput>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::data::Document;
    use crate::encoder::precompute_corpus;
    use crate::model::ModelParams;

    fn fixture(arch: Architecture) -> (Checkpoint, Corpus) {
        let mut config = RunConfig::default();
        config.model.d = 8;
        config.model.heads = 2;
        config.model.n_lower = 1;
        config.model.max_question_len = 6;
        config.model.max_document_len = 10;
        config.model.arch = arch;
        let texts = ["red fox jumps", "blue fox sleeps", "green owl hoots", "red fox jumps"];
        let corpus = Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Document {
                    id: format!("d{i}"),
                    title: String::new(),
                    text: t.to_string(),
                })
                .collect(),
        )
        .unwrap();
        let vocab = crate::encoder::Vocab::build(texts, 1, 100);
        let params = ModelParams::seeded(&config.model, vocab.len(), 9).unwrap();
        (Checkpoint::new(config, vocab, params), corpus)
    }

    fn cache_for(ckpt: &Checkpoint, corpus: &Corpus) -> EncodingCache {
        let ld = ckpt.config.model.max_document_len;
        let seqs: Vec<(String, TokenSequence)> = corpus
            .docs()
            .iter()
            .map(|d| (d.id.clone(), tokenize(&d.text, Role::Document, &ckpt.vocab, ld).unwrap()))
            .collect();
        let mut cache = EncodingCache::new(ckpt.config.model.d, ld, ckpt.params.document_hash());
        precompute_corpus(
            seqs.iter().map(|(id, s)| (id.as_str(), s)),
            &ckpt.params.document_encoder,
            &mut cache,
            &mut OpCounters::default(),
        )
        .unwrap();
        cache
    }

    #[test]
    fn cached_equals_fresh_bitwise() {
        let (ckpt, corpus) = fixture(Architecture::Decoupled);
        let cache = cache_for(&ckpt, &corpus);
        let r = Reranker::new(&ckpt, &corpus, Some(&cache));
        let q = r.tokenize_question("red fox").unwrap();
        let ids = ["d0", "d1", "d2", "d3"];
        let a = r.rerank("q", &q, &ids, RerankMode::Cached, 10).unwrap().output;
        let b = r.rerank("q", &q, &ids, RerankMode::Fresh, 10).unwrap().output;
        assert_eq!(a.results, b.results);
        assert_eq!(a.counters.interaction, b.counters.interaction);
        assert!(a.counters.encode.attention_pairs < b.counters.encode.attention_pairs);
    }

    #[test]
    fn equal_encodings_fall_back_to_first_stage_rank() {
        let (ckpt, corpus) = fixture(Architecture::Decoupled);
        let cache = cache_for(&ckpt, &corpus);
        let r = Reranker::new(&ckpt, &corpus, Some(&cache));
        let q = r.tokenize_question("red fox").unwrap();
        let out = r.rerank("q", &q, &["d3", "d1", "d0"], RerankMode::Cached, 10).unwrap().output;
        let pos = |id: &str| out.results.iter().position(|s| s.doc_id == id).unwrap();
        assert_eq!(out.results[pos("d3")].probability, out.results[pos("d0")].probability);
        assert!(pos("d3") < pos("d0"));
        let top1 = r.rerank("q", &q, &["d3", "d1", "d0"], RerankMode::Cached, 1).unwrap().output;
        assert_eq!(top1.results.len(), 1);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (ckpt, corpus) = fixture(Architecture::Decoupled);
        let cache = cache_for(&ckpt, &corpus);
        let one = Reranker::new(&ckpt, &corpus, Some(&cache));
        let many = Reranker::new(&ckpt, &corpus, Some(&cache)).with_threads(3);
        let q = one.tokenize_question("owl").unwrap();
        let ids = ["d0", "d1", "d2", "d3"];
        for mode in [RerankMode::Cached, RerankMode::Fresh] {
            let a = one.rerank("q", &q, &ids, mode, 10).unwrap().output;
            let b = many.rerank("q", &q, &ids, mode, 10).unwrap().output;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn misses_and_unknown_ids() {
        let (ckpt, corpus) = fixture(Architecture::Decoupled);
        let empty = EncodingCache::new(8, 10, ckpt.params.document_hash());
        let r = Reranker::new(&ckpt, &corpus, Some(&empty));
        let q = r.tokenize_question("red").unwrap();
        match r.rerank("q", &q, &["d0", "d2"], RerankMode::Cached, 10) {
            Err(Error::CacheMiss { keys }) => assert_eq!(keys.len(), 2),
            other => panic!("expected miss, got {:?}", other.map(|o| o.output)),
        }
        assert!(matches!(
            r.rerank("q", &q, &["nope"], RerankMode::Fresh, 10),
            Err(Error::InvalidInput(_))
        ));
        assert!(r.rerank("q", &q, &["d0"], RerankMode::Concat, 10).is_err());
    }

    #[test]
    fn concat_model_serves_concat_mode() {
        let (ckpt, corpus) = fixture(Architecture::Concat);
        let r = Reranker::new(&ckpt, &corpus, None);
        let q = r.tokenize_question("red fox").unwrap();
        let out = r.rerank("q", &q, &["d0", "d1"], RerankMode::Concat, 10).unwrap().output;
        assert_eq!(out.results.len(), 2);
        assert_eq!(out.counters.interaction, OpCounters::default());
        assert!(r.rerank("q", &q, &["d0"], RerankMode::Cached, 10).is_err());
    }
}
