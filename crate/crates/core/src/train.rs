//! Mini-batch training with BCE loss and Adam.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{bce_loss, probability, sigmoid};
use crate::config::{Architecture, TrainingConfig};
use crate::data::{Corpus, Question};
use crate::digest::Digest64;
use crate::encoder::{tokenize, Role, TokenSequence, Vocab};
use crate::error::{Error, Result};
use crate::labeling::TrainingExample;
use crate::model::Checkpoint;
use crate::tensor::{adam_step, AdamConfig, AdamState, OpCounters};

/// A tokenized training pair.
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub question: TokenSequence,
    pub document: TokenSequence,
    pub label: u8,
}

/// Tokenizes labeled examples against `vocab`.
pub fn tokenize_examples(
    examples: &[TrainingExample],
    questions: &[Question],
    corpus: &Corpus,
    vocab: &Vocab,
    max_question_len: usize,
    max_document_len: usize,
) -> Result<Vec<TrainPair>> {
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut q_cache: HashMap<&str, TokenSequence> = HashMap::new();
    let mut d_cache: HashMap<&str, TokenSequence> = HashMap::new();
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let q = by_id
            .get(ex.question_id.as_str())
            .ok_or_else(|| Error::invalid(format!("example refers to unknown question {}", ex.question_id)))?;
        let d = corpus
            .get(&ex.doc_id)
            .ok_or_else(|| Error::invalid(format!("example refers to unknown document {}", ex.doc_id)))?;
        if !q_cache.contains_key(q.id.as_str()) {
            q_cache.insert(q.id.as_str(), tokenize(&q.question, Role::Question, vocab, max_question_len)?);
        }
        if !d_cache.contains_key(d.id.as_str()) {
            d_cache.insert(d.id.as_str(), tokenize(&d.full_text(), Role::Document, vocab, max_document_len)?);
        }
        out.push(TrainPair {
            question: q_cache[q.id.as_str()].clone(),
            document: d_cache[d.id.as_str()].clone(),
            label: ex.label,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean BCE over each epoch's examples.
    pub epoch_losses: Vec<f64>,
    pub best_epoch: usize,
    pub steps: u64,
    pub stopped_early: bool,
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut d = Digest64::new("epoch-order");
    d.u64(seed).u64(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(d.finish()));
    order
}

/// Trains the tensors of `arch` in place, starting from `start`.
///
/// Returns the checkpoint with the lowest epoch loss. If a loss or gradient
/// turns non-finite, fails with [`Error::Diverged`] carrying the weights at
/// the end of the last finite epoch.
pub fn train(
    start: Checkpoint,
    examples: &[TrainPair],
    cfg: &TrainingConfig,
    arch: Architecture,
) -> Result<(Checkpoint, TrainingReport)> {
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut state = AdamState::new();
    let mut model = start;
    let mut last_good = model.clone();
    let mut best = (f64::INFINITY, model.clone());
    let mut report = TrainingReport::default();
    let mut since_best = 0;
    let mut counters = OpCounters::default();

    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, examples.len());
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            for t in model.params.trainable_mut(arch) {
                t.zero_grad();
            }
            let scale = 1.0 / batch.len() as f32;
            let mut failed = None;
            for &i in batch {
                let ex = &examples[i];
                let trace = model.params.forward_pair(arch, &ex.question, &ex.document, &mut counters)?;
                let loss = if trace.logit.is_finite() {
                    bce_loss(probability(trace.logit), ex.label)?
                } else {
                    f32::NAN
                };
                if !loss.is_finite() {
                    failed = Some(format!("loss is {loss}"));
                    break;
                }
                total += loss as f64;
                let d_logit = (sigmoid(trace.logit) - ex.label as f32) * scale;
                model.params.backward_pair(&trace, d_logit);
            }
            let step = match failed {
                Some(msg) => Err(Error::NonFinite(msg)),
                None => adam_step(&mut model.params.trainable_mut(arch), &mut state, &adam),
            };
            if let Err(e) = step {
                log::error!("epoch {}: {e}", epoch + 1);
                clear_grads(&mut last_good, arch);
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    last_good: Box::new(last_good),
                });
            }
            report.steps += 1;
        }
        let mean = total / examples.len() as f64;
        if !model.params.trainable_mut(arch).iter().all(|t| t.all_finite()) {
            log::error!("epoch {}: weights became non-finite", epoch + 1);
            clear_grads(&mut last_good, arch);
            return Err(Error::Diverged {
                epoch: epoch + 1,
                last_good: Box::new(last_good),
            });
        }
        log::info!("epoch {}: loss {mean:.5}", epoch + 1);
        report.epoch_losses.push(mean);
        last_good = model.clone();
        if mean < best.0 {
            best = (mean, model.clone());
            report.best_epoch = epoch + 1;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                report.stopped_early = true;
                break;
            }
        }
    }
    let mut out = best.1;
    clear_grads(&mut out, arch);
    Ok((out, report))
}

fn clear_grads(c: &mut Checkpoint, arch: Architecture) {
    for t in c.params.trainable_mut(arch) {
        t.clear_grad();
    }
}
