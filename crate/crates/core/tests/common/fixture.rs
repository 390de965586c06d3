//! Synthetic datasets and run configurations on disk.

use std::path::Path;

use decoupled_rerank::config::RunConfig;
use decoupled_rerank::synth::{generate, write_dataset, SynthConfig};

/// A few dozen questions; enough to exercise every stage quickly.
pub fn small_synth() -> SynthConfig {
    SynthConfig {
        train_entities: 12,
        eval_entities: 6,
        min_distractors: 2,
        max_distractors: 6,
        filler_docs: 20,
        seed: 5,
    }
}

/// Writes `synth` under `root/data` and returns a config whose artifacts go
/// to `root/out`.
pub fn run_config(root: &Path, synth: &SynthConfig) -> RunConfig {
    let data = root.join("data");
    write_dataset(&data, &generate(synth).unwrap()).unwrap();
    let mut cfg = RunConfig::default();
    cfg.paths.corpus = Some(data.join("corpus.jsonl"));
    cfg.paths.questions = Some(data.join("questions.jsonl"));
    cfg.paths.eval_questions = Some(data.join("eval_questions.jsonl"));
    cfg.paths.out_dir = Some(root.join("out"));
    cfg
}

/// Small model and short training for plumbing tests.
pub fn quick(cfg: &mut RunConfig) {
    cfg.model.d = 16;
    cfg.model.heads = 2;
    cfg.model.n_lower = 1;
    cfg.model.max_document_len = 40;
    cfg.training.epochs = 2;
    cfg.training.lr = 1e-3;
    cfg.retrieval.pool_size = 12;
}
