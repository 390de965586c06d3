//! The end-to-end stages behind the command-line tool.
//!
//! Each stage reads its inputs from the paths in [`RunConfig`], writes its
//! artifact, and stamps it with the config hash. A stage refuses inputs
//! stamped with a different hash. Errors are wrapped with the stage name.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cache::EncodingCache;
use crate::config::{check_provenance, RunConfig};
use crate::data::{read_corpus, read_questions, Corpus, Question};
use crate::encoder::{precompute_corpus, tokenize, Role, Vocab};
use crate::error::{Error, Result, StageExt};
use crate::labeling::{label_examples, AnswerMatcher, LabelConfig};
use crate::model::{Checkpoint, ModelParams};
use crate::report::EvalReport;
use crate::rerank::{read_outputs, rerank_all, write_outputs, RerankMode, RerankOutput, Reranker};
use crate::retrieval::{build_index, evaluate, p_at_n, read_tsv, write_tsv, ListSource, RankedList};
use crate::tensor::OpCounters;
use crate::text::normalize_tokens;
use crate::train::{tokenize_examples, train, TrainingReport};

pub const STAGE_INGEST: &str = "ingest";
pub const STAGE_INDEX: &str = "index";
pub const STAGE_TRAIN: &str = "train";
pub const STAGE_ENCODE: &str = "encode-docs";
pub const STAGE_RERANK: &str = "rerank";
pub const STAGE_EVAL: &str = "eval";

/// Token-length histogram with power-of-two bucket upper bounds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthHistogram {
    /// `(upper bound inclusive, count)`; the last bucket is unbounded.
    pub buckets: Vec<(String, usize)>,
    pub max: usize,
    pub mean: f64,
}

impl LengthHistogram {
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let bounds = [8usize, 16, 32, 64, 128, 256, 512];
        let mut counts = vec![0usize; bounds.len() + 1];
        for &l in lengths {
            let i = bounds.iter().position(|&b| l <= b).unwrap_or(bounds.len());
            counts[i] += 1;
        }
        let buckets = bounds
            .iter()
            .map(|b| format!("<={b}"))
            .chain(std::iter::once(">512".to_string()))
            .zip(counts)
            .collect();
        Self {
            buckets,
            max: lengths.iter().copied().max().unwrap_or(0),
            mean: if lengths.is_empty() {
                0.0
            } else {
                lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub documents: usize,
    pub questions: usize,
    pub vocab_size: usize,
    pub document_lengths: LengthHistogram,
    pub question_lengths: LengthHistogram,
}

/// Validates both inputs and summarizes them.
pub fn ingest(corpus_path: &Path, questions_path: &Path, min_freq: usize, vocab_cap: usize) -> Result<IngestSummary> {
    let docs = read_corpus(corpus_path)?;
    let corpus = Corpus::new(docs)?;
    let questions = read_questions(questions_path)?;
    let vocab = build_vocab(&corpus, &questions, min_freq, vocab_cap);
    let doc_lengths: Vec<usize> = corpus.docs().iter().map(|d| normalize_tokens(&d.full_text()).len()).collect();
    let q_lengths: Vec<usize> = questions.iter().map(|q| normalize_tokens(&q.question).len()).collect();
    Ok(IngestSummary {
        documents: corpus.len(),
        questions: questions.len(),
        vocab_size: vocab.len(),
        document_lengths: LengthHistogram::from_lengths(&doc_lengths),
        question_lengths: LengthHistogram::from_lengths(&q_lengths),
    })
}

fn build_vocab(corpus: &Corpus, questions: &[Question], min_freq: usize, cap: usize) -> Vocab {
    let doc_texts: Vec<String> = corpus.docs().iter().map(|d| d.full_text()).collect();
    Vocab::build(
        doc_texts
            .iter()
            .map(String::as_str)
            .chain(questions.iter().map(|q| q.question.as_str())),
        min_freq,
        cap,
    )
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    Corpus::new(read_corpus(cfg.paths.corpus()?)?)
}

/// Training and evaluation questions, merged by id without duplicates.
fn all_questions(cfg: &RunConfig) -> Result<Vec<Question>> {
    let mut out = read_questions(cfg.paths.questions()?)?;
    let mut seen: HashMap<String, Question> = out.iter().map(|q| (q.id.clone(), q.clone())).collect();
    if cfg.paths.eval_questions.is_some() {
        for q in read_questions(cfg.paths.eval_questions()?)? {
            match seen.get(&q.id) {
                Some(prev) if prev == &q => {}
                Some(_) => return Err(Error::DuplicateKey(format!("question id {} differs between files", q.id))),
                None => {
                    seen.insert(q.id.clone(), q.clone());
                    out.push(q);
                }
            }
        }
    }
    Ok(out)
}

fn load_lists(cfg: &RunConfig) -> Result<Vec<RankedList>> {
    let path = cfg.paths.tfidf_lists();
    let (hash, lists) = read_tsv(&path, ListSource::Tfidf)?;
    check_provenance(&path.display().to_string(), &cfg.config_hash(), hash.as_deref())?;
    Ok(lists)
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let path = cfg.paths.checkpoint();
    let ckpt = Checkpoint::load(&path)?;
    check_provenance(
        &path.display().to_string(),
        &cfg.config_hash(),
        Some(&ckpt.config.config_hash()),
    )?;
    Ok(ckpt)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    crate::codec::write_atomic(path, text.as_bytes())
}

/// First-stage retrieval for every training and evaluation question.
pub fn stage_index(cfg: &RunConfig) -> Result<Vec<RankedList>> {
    let corpus = load_corpus(cfg)?;
    let questions = all_questions(cfg)?;
    let index = build_index(corpus.docs())?;
    let lists = questions
        .iter()
        .map(|q| index.retrieve(&q.id, &q.question, cfg.retrieval.pool_size))
        .collect::<Result<Vec<_>>>()?;
    write_tsv(&cfg.paths.tfidf_lists(), &lists, &cfg.config_hash())?;
    Ok(lists)
}

/// Labels the training questions' pools and trains the configured
/// architecture; writes the checkpoint and a per-epoch loss log.
pub fn stage_train(cfg: &RunConfig) -> Result<(Checkpoint, TrainingReport)> {
    let corpus = load_corpus(cfg)?;
    let questions = read_questions(cfg.paths.questions()?)?;
    let lists = load_lists(cfg)?;
    let t = &cfg.training;
    let labeled = label_examples(
        &questions,
        &lists,
        &corpus,
        &LabelConfig {
            negative_ratio: t.negative_ratio,
            seed: t.seed,
        },
    )?;
    if labeled.skipped_questions > 0 {
        log::warn!("{} questions without answers were skipped", labeled.skipped_questions);
    }
    let positives = labeled.examples.iter().filter(|e| e.label == 1).count();
    log::info!("{} examples, {positives} positive", labeled.examples.len());
    let vocab = build_vocab(&corpus, &questions, t.min_token_freq, t.vocab_cap);
    let m = &cfg.model;
    let pairs = tokenize_examples(
        &labeled.examples,
        &questions,
        &corpus,
        &vocab,
        m.max_question_len,
        m.max_document_len,
    )?;
    let params = ModelParams::seeded(m, vocab.len(), t.seed)?;
    // Paths are not part of the model's identity.
    let stored = RunConfig {
        paths: Default::default(),
        ..cfg.clone()
    };
    let (ckpt, report) = train(Checkpoint::new(stored, vocab, params), &pairs, t, m.arch)?;
    ckpt.save(&cfg.paths.checkpoint())?;
    write_json(
        &cfg.paths.loss_log(),
        &serde_json::json!({
            "config_hash": cfg.config_hash(),
            "model_hash": format!("{:016x}", ckpt.model_hash()),
            "report": report,
        }),
    )?;
    Ok((ckpt, report))
}

/// Encodes the whole corpus with the trained document encoder into a new
/// cache file.
pub fn stage_encode_docs(cfg: &RunConfig) -> Result<EncodingCache> {
    let corpus = load_corpus(cfg)?;
    let ckpt = load_checkpoint(cfg)?;
    let m = &ckpt.config.model;
    let mut seqs = Vec::with_capacity(corpus.len());
    for d in corpus.docs() {
        match tokenize(&d.full_text(), Role::Document, &ckpt.vocab, m.max_document_len) {
            Ok(s) => seqs.push((d.id.as_str(), s)),
            Err(_) => log::warn!("document {} is empty after normalization; not cached", d.id),
        }
    }
    let mut cache = EncodingCache::new(m.d, m.max_document_len, ckpt.params.document_hash());
    let mut counters = OpCounters::default();
    let written = precompute_corpus(
        seqs.iter().map(|(id, s)| (*id, s)),
        &ckpt.params.document_encoder,
        &mut cache,
        &mut counters,
    )?;
    log::info!("encoded {written} documents ({} attention pairs)", counters.attention_pairs);
    cache.persist(&cfg.paths.cache())?;
    Ok(cache)
}

/// Reranks the evaluation questions' pools. A missing cache file in cached
/// mode is reported as a miss for every candidate, never re-encoded.
pub fn stage_rerank(cfg: &RunConfig, mode: Option<RerankMode>) -> Result<Vec<RerankOutput>> {
    stage_rerank_with_threads(cfg, mode, 1)
}

/// [`stage_rerank`] scoring candidates on `threads` workers.
pub fn stage_rerank_with_threads(cfg: &RunConfig, mode: Option<RerankMode>, threads: usize) -> Result<Vec<RerankOutput>> {
    let corpus = load_corpus(cfg)?;
    let ckpt = load_checkpoint(cfg)?;
    let questions = read_questions(cfg.paths.eval_questions()?)?;
    let lists = load_lists(cfg)?;
    let mode = mode.unwrap_or(RerankMode::default_for(ckpt.config.model.arch));
    let cache = if mode == RerankMode::Cached {
        let path = cfg.paths.cache();
        Some(if path.exists() {
            EncodingCache::load(&path)?
        } else {
            log::warn!("cache file {} not found", path.display());
            let m = &ckpt.config.model;
            EncodingCache::new(m.d, m.max_document_len, ckpt.params.document_hash())
        })
    } else {
        None
    };
    let reranker = Reranker::new(&ckpt, &corpus, cache.as_ref()).with_threads(threads);
    let outputs = rerank_all(&reranker, &questions, &lists, mode, cfg.retrieval.top_k)?;
    write_outputs(&cfg.paths.rerank(), &outputs)?;
    Ok(outputs)
}

/// Scores the reranked lists and the first-stage lists of the evaluation
/// questions.
pub fn stage_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let corpus = load_corpus(cfg)?;
    let questions = read_questions(cfg.paths.eval_questions()?)?;
    let tfidf = load_lists(cfg)?;
    let rerank_path = cfg.paths.rerank();
    let outputs = read_outputs(&rerank_path)?;
    let expected = cfg.config_hash();
    for o in &outputs {
        check_provenance(&rerank_path.display().to_string(), &expected, Some(&o.config_hash))?;
    }
    let first = outputs
        .first()
        .ok_or_else(|| Error::invalid(format!("{} holds no rerank outputs", rerank_path.display())))?;
    if let Some(o) = outputs.iter().find(|o| o.mode != first.mode || o.model_hash != first.model_hash) {
        return Err(Error::invalid(format!(
            "rerank outputs mix modes or models (question {})",
            o.question_id
        )));
    }
    let reranked = outputs.iter().map(RerankOutput::ranked_list).collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = questions.iter().map(|q| q.id.clone()).collect();
    let matcher = AnswerMatcher::new(&questions, &corpus);
    let n_values = &cfg.retrieval.eval_n;
    let metrics = evaluate(&reranked, &tfidf, &ids, &matcher, n_values)?;
    let tfidf_metrics = n_values
        .iter()
        .map(|&n| Ok((format!("P@{n}"), p_at_n(&tfidf, &ids, &matcher, n)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let report = EvalReport {
        config_hash: expected,
        model_hash: first.model_hash.clone(),
        mode: first.mode.name().to_string(),
        reranker: metrics,
        tfidf: tfidf_metrics,
    };
    write_json(&cfg.paths.metrics(), &report)?;
    Ok(report)
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub training: TrainingReport,
    pub eval: EvalReport,
}

/// index → train → encode-docs → rerank (cached or concat) → eval.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    cfg.validate().stage("config")?;
    stage_index(cfg).stage(STAGE_INDEX)?;
    let (_, training) = stage_train(cfg).stage(STAGE_TRAIN)?;
    let mode = RerankMode::default_for(cfg.model.arch);
    if mode == RerankMode::Cached {
        stage_encode_docs(cfg).stage(STAGE_ENCODE)?;
    }
    stage_rerank(cfg, Some(mode)).stage(STAGE_RERANK)?;
    let eval = stage_eval(cfg).stage(STAGE_EVAL)?;
    Ok(PipelineOutcome { training, eval })
}
