//! Cost benchmark of the three rerank modes.
//!
//! Inputs are synthetic token sequences filled to their maximum lengths so
//! that instrumented counters can be compared against closed forms. Timing
//! covers encoding, interaction and classification only; tokenization and
//! cache population happen before the clock starts. Timed runs use a single
//! worker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::EncodingCache;
use crate::config::{Architecture, ModelConfig, RunConfig};
use crate::data::{Corpus, Document};
use crate::encoder::{precompute_corpus, tokenize, Role, TokenSequence, Vocab};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelParams};
use crate::rerank::{RerankMode, Reranker, StageCounters};
use crate::tensor::OpCounters;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchProfile {
    pub d: usize,
    pub heads: usize,
    pub n_lower: usize,
    pub k_layers: usize,
    pub lq: usize,
    pub ld: usize,
    /// Candidates per question.
    pub nd: usize,
    pub repetitions: usize,
    /// Questions timed per repetition.
    pub questions: usize,
    pub seed: u64,
}

impl Default for BenchProfile {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            n_lower: 12,
            k_layers: 1,
            lq: 16,
            ld: 128,
            nd: 80,
            repetitions: 5,
            questions: 1,
            seed: 29,
        }
    }
}

impl BenchProfile {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            heads: self.heads,
            n_lower: self.n_lower,
            k_layers: self.k_layers,
            max_question_len: self.lq,
            max_document_len: self.ld,
            arch: Architecture::Decoupled,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.nd == 0 || self.repetitions == 0 || self.questions == 0 {
            return Err(Error::invalid("nd, repetitions and questions must be positive"));
        }
        if self.lq < 3 || self.ld < 3 {
            return Err(Error::invalid("sequence lengths must be at least 3"));
        }
        Ok(())
    }
}

/// Attention pairs predicted for one question with `nd` full-length
/// candidates.
pub fn closed_form_pairs(p: &BenchProfile, mode: RerankMode, nd: usize) -> u64 {
    let (h, n, k, nd) = (p.heads as u64, p.n_lower as u64, p.k_layers as u64, nd as u64);
    let (lq, ld) = (p.lq as u64, p.ld as u64);
    let joint = (lq + ld) * (lq + ld);
    match mode {
        RerankMode::Cached => n * h * lq * lq + nd * k * h * joint,
        RerankMode::Fresh => n * h * (lq * lq + nd * ld * ld) + nd * k * h * joint,
        RerankMode::Concat => nd * n * h * joint,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: RerankMode,
    /// Per question.
    pub counters: StageCounters,
    pub closed_form_pairs: u64,
    /// Mean and standard deviation of per-question latency over repetitions.
    pub wall_mean_secs: f64,
    pub wall_std_secs: f64,
    pub counter_speedup_vs_concat: f64,
    pub wall_speedup_vs_concat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub nd: usize,
    pub k_layers: usize,
    pub cached: StageCounters,
    pub concat: StageCounters,
    pub counter_speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config_hash: String,
    pub profile: BenchProfile,
    pub modes: Vec<ModeResult>,
    pub nd_sweep: Vec<SweepPoint>,
    pub k_sweep: Vec<SweepPoint>,
}

impl BenchReport {
    pub fn mode(&self, mode: RerankMode) -> Option<&ModeResult> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

/// A model of the profile's shape with synthetic full-length inputs and a
/// populated cache.
pub struct BenchFixture {
    pub checkpoint: Checkpoint,
    pub corpus: Corpus,
    pub cache: EncodingCache,
    pub questions: Vec<TokenSequence>,
    pub doc_ids: Vec<String>,
}

const BENCH_VOCAB: usize = 500;

fn random_text(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words)
        .map(|_| format!("w{}", rng.gen_range(0..BENCH_VOCAB)))
        .collect::<Vec<_>>()
        .join(" ")
}

impl BenchFixture {
    /// Randomly initialized weights of the profile's shape.
    pub fn new(profile: &BenchProfile) -> Result<Self> {
        let mut config = RunConfig::default();
        config.model = profile.model_config();
        config.training.seed = profile.seed;
        config.validate()?;
        let vocab = Vocab::from_tokens(
            ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
                .iter()
                .map(|s| s.to_string())
                .chain((0..BENCH_VOCAB).map(|i| format!("w{i}")))
                .collect(),
        )?;
        let params = ModelParams::seeded(&config.model, vocab.len(), profile.seed)?;
        Self::with_checkpoint(Checkpoint::new(config, vocab, params), profile)
    }

    /// Uses an existing checkpoint; its shape overrides the profile's.
    pub fn with_checkpoint(checkpoint: Checkpoint, profile: &BenchProfile) -> Result<Self> {
        profile.validate()?;
        let m = &checkpoint.config.model;
        let (lq, ld) = (m.max_question_len, m.max_document_len);
        let mut rng = ChaCha8Rng::seed_from_u64(profile.seed ^ 0x5eed);
        let docs: Vec<Document> = (0..profile.nd)
            .map(|i| Document {
                id: format!("bench{i:04}"),
                title: String::new(),
                text: random_text(&mut rng, ld - 2),
            })
            .collect();
        let corpus = Corpus::new(docs)?;
        let seqs = corpus
            .docs()
            .iter()
            .map(|d| tokenize(&d.text, Role::Document, &checkpoint.vocab, ld))
            .collect::<Result<Vec<_>>>()?;
        let mut cache = EncodingCache::new(m.d, ld, checkpoint.params.document_hash());
        precompute_corpus(
            corpus.docs().iter().map(|d| d.id.as_str()).zip(&seqs),
            &checkpoint.params.document_encoder,
            &mut cache,
            &mut OpCounters::default(),
        )?;
        let questions = (0..profile.questions)
            .map(|_| tokenize(&random_text(&mut rng, lq - 2), Role::Question, &checkpoint.vocab, lq))
            .collect::<Result<Vec<_>>>()?;
        let doc_ids = corpus.docs().iter().map(|d| d.id.clone()).collect();
        Ok(Self {
            checkpoint,
            corpus,
            cache,
            questions,
            doc_ids,
        })
    }

    fn reranker(&self) -> Reranker<'_> {
        Reranker::new(&self.checkpoint, &self.corpus, Some(&self.cache))
    }

    /// Counters for one question over the first `nd` candidates.
    pub fn counters(&self, mode: RerankMode, nd: usize) -> Result<StageCounters> {
        let ids: Vec<&str> = self.doc_ids.iter().take(nd).map(String::as_str).collect();
        let out = self
            .reranker()
            .rerank_unchecked("bench", &self.questions[0], &ids, mode, nd.max(1))?;
        Ok(out.output.counters)
    }

    /// Per-question latency samples, one per repetition.
    pub fn time(&self, mode: RerankMode, repetitions: usize) -> Result<(StageCounters, Vec<f64>)> {
        let r = self.reranker();
        let ids: Vec<&str> = self.doc_ids.iter().map(String::as_str).collect();
        let mut samples = Vec::with_capacity(repetitions);
        let mut counters = StageCounters::default();
        for _ in 0..repetitions {
            let mut secs = 0.0;
            for (i, q) in self.questions.iter().enumerate() {
                let out = r.rerank_unchecked("bench", q, &ids, mode, ids.len())?;
                secs += out.elapsed.as_secs_f64();
                if i == 0 {
                    counters = out.output.counters;
                }
            }
            samples.push(secs / self.questions.len() as f64);
        }
        Ok((counters, samples))
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn ratio(a: u64, b: u64) -> f64 {
    a as f64 / b as f64
}

/// Counters of cached and concat modes for each candidate count.
pub fn nd_sweep(fixture: &BenchFixture, nds: &[usize]) -> Result<Vec<SweepPoint>> {
    let k = fixture.checkpoint.config.model.k_layers;
    nds.iter()
        .map(|&nd| {
            if nd == 0 || nd > fixture.doc_ids.len() {
                return Err(Error::invalid(format!("sweep point nd={nd} outside 1..={}", fixture.doc_ids.len())));
            }
            let cached = fixture.counters(RerankMode::Cached, nd)?;
            let concat = fixture.counters(RerankMode::Concat, nd)?;
            Ok(SweepPoint {
                nd,
                k_layers: k,
                cached,
                concat,
                counter_speedup: ratio(concat.total().attention_pairs, cached.total().attention_pairs),
            })
        })
        .collect()
}

/// Counters of cached mode for each interaction depth; the concat
/// baseline does not depend on it and is measured once.
pub fn k_sweep(profile: &BenchProfile, ks: &[usize]) -> Result<Vec<SweepPoint>> {
    let mut concat = None;
    ks.iter()
        .map(|&k| {
            let p = BenchProfile {
                k_layers: k,
                questions: 1,
                ..profile.clone()
            };
            let fixture = BenchFixture::new(&p)?;
            let cached = fixture.counters(RerankMode::Cached, p.nd)?;
            let concat = match concat {
                Some(c) => c,
                None => *concat.insert(fixture.counters(RerankMode::Concat, p.nd)?),
            };
            Ok(SweepPoint {
                nd: p.nd,
                k_layers: k,
                cached,
                concat,
                counter_speedup: ratio(concat.total().attention_pairs, cached.total().attention_pairs),
            })
        })
        .collect()
}

/// Times every mode and runs both sweeps.
pub fn run_bench(
    fixture: &BenchFixture,
    profile: &BenchProfile,
    nds: &[usize],
    ks: &[usize],
) -> Result<BenchReport> {
    let mut timed = Vec::new();
    for mode in [RerankMode::Concat, RerankMode::Fresh, RerankMode::Cached] {
        let (counters, samples) = fixture.time(mode, profile.repetitions)?;
        log::info!("{}: {:?}", mode.name(), samples);
        timed.push((mode, counters, samples));
    }
    let m = &fixture.checkpoint.config.model;
    let shape = BenchProfile {
        d: m.d,
        heads: m.heads,
        n_lower: m.n_lower,
        k_layers: m.k_layers,
        lq: m.max_question_len,
        ld: m.max_document_len,
        ..profile.clone()
    };
    let (concat_pairs, concat_wall) = {
        let (_, c, s) = &timed[0];
        (c.total().attention_pairs, mean_std(s).0)
    };
    let modes = timed
        .into_iter()
        .map(|(mode, counters, samples)| {
            let (mean, std) = mean_std(&samples);
            ModeResult {
                mode,
                counters,
                closed_form_pairs: closed_form_pairs(&shape, mode, profile.nd),
                wall_mean_secs: mean,
                wall_std_secs: std,
                counter_speedup_vs_concat: ratio(concat_pairs, counters.total().attention_pairs),
                wall_speedup_vs_concat: concat_wall / mean,
            }
        })
        .collect();
    Ok(BenchReport {
        config_hash: fixture.checkpoint.config.config_hash(),
        profile: shape.clone(),
        modes,
        nd_sweep: nd_sweep(fixture, nds)?,
        k_sweep: if ks.is_empty() { Vec::new() } else { k_sweep(&shape, ks)? },
    })
}
