//! Training harness behaviour on hand-built data.

use decoupled_rerank::config::{Architecture, ModelConfig, RunConfig};
use decoupled_rerank::encoder::{tokenize, Role, Vocab};
use decoupled_rerank::model::{Checkpoint, ModelParams};
use decoupled_rerank::tensor::OpCounters;
use decoupled_rerank::train::{train, TrainPair};

/// Four questions, each with one matching and one mismatching document.
/// The label depends only on whether the document's cue word pairs with the
/// question's topic word.
fn separable(arch: Architecture) -> (Checkpoint, Vec<TrainPair>) {
    let words = ["red", "green", "blue", "amber", "apple", "leaf", "sky", "honey", "about", "what", "colour"];
    let vocab = Vocab::from_tokens(
        ["[PAD]", "[UNK]", "[CLS]", "[SEP]"].iter().chain(&words).map(|s| s.to_string()).collect(),
    )
    .unwrap();
    let mut config = RunConfig::default();
    config.model = ModelConfig {
        d: 32,
        heads: 4,
        n_lower: 2,
        k_layers: 1,
        max_question_len: 8,
        max_document_len: 8,
        arch,
    };
    let topics = [("apple", "red"), ("leaf", "green"), ("sky", "blue"), ("honey", "amber")];
    let mut pairs = Vec::new();
    for (i, (topic, colour)) in topics.iter().enumerate() {
        let wrong = topics[(i + 1) % topics.len()].1;
        let q = tokenize(&format!("what colour {topic}"), Role::Question, &vocab, 8).unwrap();
        for (cue, label) in [(colour, 1), (&wrong, 0)] {
            let d = tokenize(&format!("about {topic} {cue}"), Role::Document, &vocab, 8).unwrap();
            pairs.push(TrainPair {
                question: q.clone(),
                document: d,
                label,
            });
        }
    }
    let params = ModelParams::seeded(&config.model, vocab.len(), 3).unwrap();
    (Checkpoint::new(config, vocab, params), pairs)
}

fn bce(logit: f32, label: u8) -> f64 {
    let p = 1.0 / (1.0 + (-(logit as f64)).exp());
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub const OVERFIT_EPOCHS: usize = 200;
pub const OVERFIT_LOSS: f64 = 0.05;

#[test]
fn overfits_eight_separable_examples() {
    let (start, pairs) = separable(Architecture::Decoupled);
    assert_eq!(pairs.len(), 8);
    let mut tc = start.config.training.clone();
    tc.lr = 1e-3;
    tc.batch_size = 8;
    tc.epochs = OVERFIT_EPOCHS;
    tc.patience = None;
    let (trained, report) = train(start, &pairs, &tc, Architecture::Decoupled).unwrap();
    let best = report.epoch_losses.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(best < OVERFIT_LOSS, "best epoch loss {best}");
    // The returned weights reproduce a low loss when rescored independently.
    let mean: f64 = pairs
        .iter()
        .map(|p| {
            let t = trained
                .params
                .forward_pair(Architecture::Decoupled, &p.question, &p.document, &mut OpCounters::default())
                .unwrap();
            bce(t.logit, p.label)
        })
        .sum::<f64>()
        / pairs.len() as f64;
    assert!(mean < OVERFIT_LOSS, "rescored loss {mean}");
}

#[test]
fn zero_learning_rate_leaves_weights_and_reports_batch_mean_loss() {
    for arch in [Architecture::Decoupled, Architecture::DecoupledLinear, Architecture::Concat] {
        let (start, pairs) = separable(arch);
        let mut tc = start.config.training.clone();
        tc.lr = 0.0;
        tc.batch_size = 3;
        tc.epochs = 2;
        tc.patience = None;
        let (trained, report) = train(start.clone(), &pairs, &tc, arch).unwrap();
        assert_eq!(trained.model_hash(), start.model_hash(), "{arch:?}");
        let expected: f64 = pairs
            .iter()
            .map(|p| {
                let t = start
                    .params
                    .forward_pair(arch, &p.question, &p.document, &mut OpCounters::default())
                    .unwrap();
                bce(t.logit, p.label)
            })
            .sum::<f64>()
            / pairs.len() as f64;
        for &loss in &report.epoch_losses {
            assert!((loss - expected).abs() < 1e-5, "{arch:?}: {loss} vs {expected}");
        }
    }
}

#[test]
fn untouched_components_keep_their_weights() {
    let (start, pairs) = separable(Architecture::Concat);
    let mut tc = start.config.training.clone();
    tc.lr = 1e-2;
    tc.epochs = 2;
    let (trained, _) = train(start.clone(), &pairs, &tc, Architecture::Concat).unwrap();
    let before = start.params.named_tensors();
    let after = trained.params.named_tensors();
    for ((name, a), (_, b)) in before.iter().zip(&after) {
        if !name.starts_with("concat") {
            assert_eq!(a.data(), b.data(), "{name} changed");
        }
    }
    assert_ne!(trained.model_hash(), start.model_hash());
}
