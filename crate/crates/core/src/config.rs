//! Run configuration: model shape, training, retrieval and artifact paths.
//!
//! A config file is either a JSON object of this structure (missing fields
//! take defaults) or `key = value` lines using the flat keys accepted by
//! [`RunConfig::set`]. Command-line flags are applied on top through the
//! same keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::Digest64;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Independent encoders with a Transformer interaction stack.
    Decoupled,
    /// Independent encoders with per-CLS linear maps instead of interaction layers.
    DecoupledLinear,
    /// Single encoder over the concatenated pair.
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    /// Depth of each independent encoder stack.
    pub n_lower: usize,
    /// Interaction layers.
    pub k_layers: usize,
    pub max_question_len: usize,
    pub max_document_len: usize,
    pub arch: Architecture,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 32,
            heads: 4,
            n_lower: 2,
            k_layers: 1,
            max_question_len: 16,
            max_document_len: 64,
            arch: Architecture::Decoupled,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub lr: f32,
    pub batch_size: usize,
    /// Upper bound on epochs.
    pub epochs: usize,
    /// Stop after this many epochs without a new best training loss.
    pub patience: Option<usize>,
    pub seed: u64,
    /// Negatives per positive; `None` keeps all.
    pub negative_ratio: Option<usize>,
    pub min_token_freq: usize,
    pub vocab_cap: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr: 4e-5,
            batch_size: 32,
            epochs: 50,
            patience: Some(5),
            seed: 13,
            negative_ratio: Some(4),
            min_token_freq: 2,
            vocab_cap: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// First-stage candidates per question.
    pub pool_size: usize,
    /// Documents kept after reranking.
    pub top_k: usize,
    /// Cutoffs reported by evaluation; at most `top_k`.
    pub eval_n: Vec<usize>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            pool_size: 80,
            top_k: 10,
            eval_n: vec![1, 5, 10],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    /// Held-out questions for reranking and evaluation; defaults to `questions`.
    pub eval_questions: Option<PathBuf>,
    /// Directory for artifacts whose path is not set explicitly.
    pub out_dir: Option<PathBuf>,
    pub tfidf_lists: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub rerank: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub bench: Option<PathBuf>,
}

impl PathsConfig {
    fn out(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| {
            self.out_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("run"))
                .join(default_name)
        })
    }

    pub fn corpus(&self) -> Result<&Path> {
        self.corpus.as_deref().ok_or_else(|| Error::MissingField("corpus".into()))
    }

    pub fn questions(&self) -> Result<&Path> {
        self.questions.as_deref().ok_or_else(|| Error::MissingField("questions".into()))
    }

    pub fn eval_questions(&self) -> Result<&Path> {
        match &self.eval_questions {
            Some(p) => Ok(p),
            None => self.questions(),
        }
    }

    pub fn tfidf_lists(&self) -> PathBuf {
        self.out(&self.tfidf_lists, "tfidf.tsv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.out(&self.checkpoint, "model.ckpt")
    }

    pub fn cache(&self) -> PathBuf {
        self.out(&self.cache, "documents.dcbc")
    }

    pub fn rerank(&self) -> PathBuf {
        self.out(&self.rerank, "rerank.jsonl")
    }

    pub fn metrics(&self) -> PathBuf {
        self.out(&self.metrics, "metrics.json")
    }

    pub fn bench(&self) -> PathBuf {
        self.out(&self.bench, "bench.json")
    }

    pub fn loss_log(&self) -> PathBuf {
        self.checkpoint().with_extension("losses.json")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub retrieval: RetrievalConfig,
    pub paths: PathsConfig,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {value:?} for `{key}`")))
}

fn parse_optional_count(key: &str, value: &str) -> Result<Option<usize>> {
    match value.to_ascii_lowercase().as_str() {
        "none" | "inf" | "all" | "off" => Ok(None),
        _ => parse(key, value).map(Some),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            return Ok(serde_json::from_str(&text)?);
        }
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Sets one field by its flat key (dashes and underscores both accepted).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key.replace('-', "_");
        let path = || Some(PathBuf::from(value));
        match k.as_str() {
            "d" => self.model.d = parse(key, value)?,
            "heads" => self.model.heads = parse(key, value)?,
            "n_lower" => self.model.n_lower = parse(key, value)?,
            "k_layers" | "k" => self.model.k_layers = parse(key, value)?,
            "max_question_len" => self.model.max_question_len = parse(key, value)?,
            "max_document_len" => self.model.max_document_len = parse(key, value)?,
            "arch" => {
                self.model.arch = <Architecture as clap::ValueEnum>::from_str(value, true)
                    .map_err(|_| Error::invalid(format!("unknown architecture {value:?}")))?
            }
            "lr" => self.training.lr = parse(key, value)?,
            "batch_size" => self.training.batch_size = parse(key, value)?,
            "epochs" => self.training.epochs = parse(key, value)?,
            "patience" => self.training.patience = parse_optional_count(key, value)?,
            "seed" => self.training.seed = parse(key, value)?,
            "negative_ratio" => self.training.negative_ratio = parse_optional_count(key, value)?,
            "min_token_freq" => self.training.min_token_freq = parse(key, value)?,
            "vocab_cap" => self.training.vocab_cap = parse(key, value)?,
            "pool_size" => self.retrieval.pool_size = parse(key, value)?,
            "top_k" => self.retrieval.top_k = parse(key, value)?,
            "eval_n" => {
                self.retrieval.eval_n = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "corpus" => self.paths.corpus = path(),
            "questions" => self.paths.questions = path(),
            "eval_questions" => self.paths.eval_questions = path(),
            "out_dir" => self.paths.out_dir = path(),
            "tfidf_lists" => self.paths.tfidf_lists = path(),
            "checkpoint" => self.paths.checkpoint = path(),
            "cache" => self.paths.cache = path(),
            "rerank" => self.paths.rerank = path(),
            "metrics" => self.paths.metrics = path(),
            "bench" => self.paths.bench = path(),
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let t = &self.training;
        let r = &self.retrieval;
        let positive = [
            ("d", m.d),
            ("heads", m.heads),
            ("n_lower", m.n_lower),
            ("k_layers", m.k_layers),
            ("batch_size", t.batch_size),
            ("epochs", t.epochs),
            ("pool_size", r.pool_size),
            ("top_k", r.top_k),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("`{name}` must be positive")));
        }
        if m.d % m.heads != 0 {
            return Err(Error::invalid(format!("d = {} is not divisible by heads = {}", m.d, m.heads)));
        }
        if m.max_question_len < 2 || m.max_document_len < 2 {
            return Err(Error::invalid("maximum lengths must leave room for CLS and SEP"));
        }
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} is invalid", t.lr)));
        }
        if r.eval_n.iter().any(|&n| n == 0 || n > r.top_k) {
            return Err(Error::invalid(format!(
                "evaluation cutoffs must lie in 1..={} (top_k)",
                r.top_k
            )));
        }
        Ok(())
    }

    /// Digest of every setting except paths; stamped on every artifact.
    pub fn config_hash(&self) -> String {
        let settings = serde_json::json!({
            "model": self.model,
            "training": self.training,
            "retrieval": self.retrieval,
        });
        let mut d = Digest64::new("run-config");
        d.bytes(settings.to_string().as_bytes());
        d.finish_hex()
    }
}

/// Rejects artifacts produced under a different configuration.
pub fn check_provenance(artifact: &str, expected: &str, found: Option<&str>) -> Result<()> {
    match found {
        Some(h) if h == expected => Ok(()),
        other => Err(Error::Provenance {
            artifact: artifact.to_string(),
            expected: expected.to_string(),
            found: other.unwrap_or("<none>").to_string(),
        }),
    }
}
