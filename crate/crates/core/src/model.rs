//! Full parameter set, pair scoring for each architecture, and the
//! checkpoint format.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! magic "DCBK" | version u16 | config (len-prefixed JSON) |
//! vocab count u32, tokens (len-prefixed) | model_hash u64 |
//! tensor count u32, per tensor: name, ndim u32, dims u32…, f32 values
//! ```

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{ClassifierParams, ClassifierTrace};
use crate::codec::{write_atomic, ByteReader, ByteWriter};
use crate::config::{Architecture, ModelConfig, RunConfig};
use crate::digest::Digest64;
use crate::encoder::{
    ConcatEncoderParams, ConcatTrace, EncoderParams, EncoderTrace, EncodingMatrix, Role, TokenSequence, Vocab,
};
use crate::error::{Error, Result};
use crate::interaction::{InteractionParams, InteractionTrace, LinearInteractionParams, LinearTrace, PairOutput};
use crate::tensor::{OpCounters, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCBK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub question_encoder: EncoderParams,
    pub document_encoder: EncoderParams,
    pub interaction: InteractionParams,
    pub linear: LinearInteractionParams,
    pub classifier: ClassifierParams,
    pub concat: ConcatEncoderParams,
    pub concat_classifier: ClassifierParams,
}

impl ModelParams {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        let (d, h, lq, ld) = (cfg.d, cfg.heads, cfg.max_question_len, cfg.max_document_len);
        Ok(Self {
            question_encoder: EncoderParams::new(Role::Question, vocab_size, lq, d, h, cfg.n_lower, rng)?,
            document_encoder: EncoderParams::new(Role::Document, vocab_size, ld, d, h, cfg.n_lower, rng)?,
            interaction: InteractionParams::new(lq, ld, d, h, cfg.k_layers, rng)?,
            linear: LinearInteractionParams::new(d, rng),
            classifier: ClassifierParams::new(d, d, rng),
            concat: ConcatEncoderParams::new(vocab_size, lq + ld, d, h, cfg.n_lower, rng)?,
            concat_classifier: ClassifierParams::new(d, d, rng),
        })
    }

    /// Deterministic initialization from a seed.
    pub fn seeded(cfg: &ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        Self::new(cfg, vocab_size, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn width(&self) -> usize {
        self.question_encoder.width()
    }

    /// Every tensor with a stable name, in serialization order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let groups: [(&str, Vec<&Tensor>); 7] = [
            ("question_encoder", self.question_encoder.tensors()),
            ("document_encoder", self.document_encoder.tensors()),
            ("interaction", self.interaction.tensors()),
            ("linear", self.linear.tensors()),
            ("classifier", self.classifier.tensors()),
            ("concat", self.concat.encoder.tensors()),
            ("concat_classifier", self.concat_classifier.tensors()),
        ];
        groups
            .into_iter()
            .flat_map(|(g, ts)| ts.into_iter().enumerate().map(move |(i, t)| (format!("{g}.{i}"), t)))
            .collect()
    }

    fn all_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.question_encoder.tensors_mut();
        v.extend(self.document_encoder.tensors_mut());
        v.extend(self.interaction.tensors_mut());
        v.extend(self.linear.tensors_mut());
        v.extend(self.classifier.tensors_mut());
        v.extend(self.concat.encoder.tensors_mut());
        v.extend(self.concat_classifier.tensors_mut());
        v
    }

    /// The tensors optimized when training `arch`.
    pub fn trainable_mut(&mut self, arch: Architecture) -> Vec<&mut Tensor> {
        match arch {
            Architecture::Decoupled => {
                let mut v = self.question_encoder.tensors_mut();
                v.extend(self.document_encoder.tensors_mut());
                v.extend(self.interaction.tensors_mut());
                v.extend(self.classifier.tensors_mut());
                v
            }
            Architecture::DecoupledLinear => {
                let mut v = self.question_encoder.tensors_mut();
                v.extend(self.document_encoder.tensors_mut());
                v.extend(self.linear.tensors_mut());
                v.extend(self.classifier.tensors_mut());
                v
            }
            Architecture::Concat => {
                let mut v = self.concat.encoder.tensors_mut();
                v.extend(self.concat_classifier.tensors_mut());
                v
            }
        }
    }

    /// Digest over every weight.
    pub fn model_hash(&self) -> u64 {
        let mut d = Digest64::new("model");
        for (name, t) in self.named_tensors() {
            d.bytes(name.as_bytes()).tensor(t);
        }
        d.finish()
    }

    /// Digest that keys cached document encodings.
    pub fn document_hash(&self) -> u64 {
        self.document_encoder.digest()
    }

    /// Logit of a decoupled architecture from the two encodings.
    pub fn decoupled_logit(
        &self,
        arch: Architecture,
        q: &EncodingMatrix,
        d: &EncodingMatrix,
        counters: &mut OpCounters,
    ) -> Result<f32> {
        let pair = match arch {
            Architecture::Decoupled => self.interaction.forward_traced(q, d, counters)?.0,
            Architecture::DecoupledLinear => self.linear.forward_traced(q, d, counters)?.0,
            Architecture::Concat => return Err(Error::invalid("the concat model does not score encodings")),
        };
        self.classifier.forward_traced(&pair).map(|(l, _)| l)
    }

    /// Logit of the concatenated baseline.
    pub fn concat_logit(&self, q: &TokenSequence, d: &TokenSequence, counters: &mut OpCounters) -> Result<f32> {
        let (enc, trace) = self.concat.forward_traced(q, d, counters)?;
        let pair = concat_pair(&enc, trace.doc_cls);
        self.concat_classifier.forward_traced(&pair).map(|(l, _)| l)
    }

    /// Forward pass of one training pair, keeping everything the backward
    /// pass needs.
    pub fn forward_pair(
        &self,
        arch: Architecture,
        q: &TokenSequence,
        d: &TokenSequence,
        counters: &mut OpCounters,
    ) -> Result<PairTrace> {
        match arch {
            Architecture::Concat => {
                let (enc, trace) = self.concat.forward_traced(q, d, counters)?;
                let pair = concat_pair(&enc, trace.doc_cls);
                let (logit, cls) = self.concat_classifier.forward_traced(&pair)?;
                Ok(PairTrace {
                    logit,
                    inner: Inner::Concat {
                        trace,
                        rows: enc.rows(),
                        cls,
                    },
                })
            }
            _ => {
                let (qe, qt) = self.question_encoder.forward_traced(q, counters)?;
                let (de, dt) = self.document_encoder.forward_traced(d, counters)?;
                let (pair, mid) = if arch == Architecture::Decoupled {
                    let (p, t) = self.interaction.forward_traced(&qe, &de, counters)?;
                    (p, Mid::Interaction(t))
                } else {
                    let (p, t) = self.linear.forward_traced(&qe, &de, counters)?;
                    (p, Mid::Linear(t))
                };
                let (logit, cls) = self.classifier.forward_traced(&pair)?;
                Ok(PairTrace {
                    logit,
                    inner: Inner::Decoupled {
                        question: qt,
                        document: dt,
                        q_rows: qe.rows(),
                        d_rows: de.rows(),
                        mid,
                        cls,
                    },
                })
            }
        }
    }

    /// Accumulates the gradients of `d_logit` into the weights.
    pub fn backward_pair(&mut self, trace: &PairTrace, d_logit: f32) {
        let w = self.width();
        match &trace.inner {
            Inner::Concat { trace, rows, cls } => {
                let (dq, dd) = self.concat_classifier.backward(cls, d_logit);
                let mut g = vec![0.0; rows * w];
                g[..w].copy_from_slice(&dq);
                let off = trace.doc_cls * w;
                g[off..off + w].iter_mut().zip(&dd).for_each(|(a, b)| *a += b);
                self.concat.backward(trace, &g);
            }
            Inner::Decoupled {
                question,
                document,
                q_rows,
                d_rows,
                mid,
                cls,
            } => {
                let (dq_cls, dd_cls) = self.classifier.backward(cls, d_logit);
                let (gq, gd) = match mid {
                    Mid::Interaction(t) => self.interaction.backward(t, &dq_cls, &dd_cls),
                    Mid::Linear(t) => {
                        let (a, b) = self.linear.backward(t, &dq_cls, &dd_cls);
                        let mut gq = vec![0.0; q_rows * w];
                        let mut gd = vec![0.0; d_rows * w];
                        gq[..w].copy_from_slice(&a);
                        gd[..w].copy_from_slice(&b);
                        (gq, gd)
                    }
                };
                self.question_encoder.backward(question, &gq);
                self.document_encoder.backward(document, &gd);
            }
        }
    }
}

fn concat_pair(enc: &EncodingMatrix, doc_cls: usize) -> PairOutput {
    PairOutput {
        o_cls: enc.values.row(0).to_vec(),
        o_cls_doc: enc.values.row(doc_cls).to_vec(),
    }
}

enum Mid {
    Interaction(InteractionTrace),
    Linear(LinearTrace),
}

enum Inner {
    Decoupled {
        question: EncoderTrace,
        document: EncoderTrace,
        q_rows: usize,
        d_rows: usize,
        mid: Mid,
        cls: ClassifierTrace,
    },
    Concat {
        trace: ConcatTrace,
        rows: usize,
        cls: ClassifierTrace,
    },
}

/// Activations of one scored pair.
pub struct PairTrace {
    pub logit: f32,
    inner: Inner,
}

/// Trained model plus everything needed to reproduce its inputs.
#[derive(Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
}

impl fmt::Debug for Checkpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Checkpoint")
            .field("config_hash", &self.config.config_hash())
            .field("vocab_size", &self.vocab.len())
            .field("model_hash", &format_args!("{:016x}", self.params.model_hash()))
            .finish()
    }
}

impl Checkpoint {
    pub fn new(config: RunConfig, vocab: Vocab, params: ModelParams) -> Self {
        Self { config, vocab, params }
    }

    pub fn model_hash(&self) -> u64 {
        self.params.model_hash()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.raw(CHECKPOINT_MAGIC);
        w.u16(CHECKPOINT_VERSION);
        w.str(&serde_json::to_string(&self.config)?);
        w.u32(self.vocab.len() as u32);
        for t in self.vocab.tokens() {
            w.str(t);
        }
        w.u64(self.model_hash());
        let named = self.params.named_tensors();
        w.u32(named.len() as u32);
        for (name, t) in named {
            w.str(&name);
            w.u32(t.shape().len() as u32);
            for &s in t.shape() {
                w.u32(s as u32);
            }
            w.f32s(t.data());
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "not a checkpoint file"));
        }
        let at = r.offset();
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
        }
        let at = r.offset();
        let config: RunConfig = serde_json::from_str(&r.str("config")?)
            .map_err(|e| Error::format(at, format!("bad config: {e}")))?;
        config.validate()?;
        let n_tokens = r.u32("vocabulary size")? as usize;
        let tokens = (0..n_tokens).map(|_| r.str("token")).collect::<Result<Vec<_>>>()?;
        let vocab = Vocab::from_tokens(tokens)?;
        let stored_hash = r.u64("model hash")?;

        let mut params = ModelParams::seeded(&config.model, vocab.len(), 0)?;
        let expected: Vec<(String, Vec<usize>)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        let at = r.offset();
        let count = r.u32("tensor count")? as usize;
        if count != expected.len() {
            return Err(Error::format(at, format!("expected {} tensors, found {count}", expected.len())));
        }
        let mut slots = params.all_tensors_mut();
        for ((name, shape), slot) in expected.iter().zip(slots.iter_mut()) {
            let at = r.offset();
            let found = r.str("tensor name")?;
            if &found != name {
                return Err(Error::format(at, format!("expected tensor {name}, found {found}")));
            }
            let at = r.offset();
            let ndim = r.u32("rank")? as usize;
            let dims = (0..ndim)
                .map(|_| r.u32("dimension").map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            if &dims != shape {
                return Err(Error::format(at, format!("tensor {name} has shape {dims:?}, expected {shape:?}")));
            }
            let values = r.f32s(shape.iter().product(), "tensor values")?;
            slot.data_mut().copy_from_slice(&values);
        }
        drop(slots);
        r.expect_end()?;
        let ckpt = Self { config, vocab, params };
        if ckpt.model_hash() != stored_hash {
            return Err(Error::Consistency(format!(
                "checkpoint records model hash {stored_hash:016x} but its weights hash to {:016x}",
                ckpt.model_hash()
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint {
        let mut config = RunConfig::default();
        config.model.d = 8;
        config.model.heads = 2;
        config.model.n_lower = 1;
        config.model.max_question_len = 6;
        config.model.max_document_len = 10;
        let vocab = Vocab::build(["alpha beta gamma", "beta gamma delta"], 1, 100);
        let params = ModelParams::seeded(&config.model, vocab.len(), 3).unwrap();
        Checkpoint::new(config, vocab, params)
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let c = tiny();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(bytes, c.to_bytes().unwrap());
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model_hash(), c.model_hash());
        assert_eq!(back.params.document_hash(), c.params.document_hash());
        assert_eq!(back.vocab, c.vocab);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = tiny().to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 2] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Consistency(_))));
        assert!(Checkpoint::from_bytes(b"XXXX").is_err());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = tiny();
        let b = tiny();
        assert_eq!(a.model_hash(), b.model_hash());
        let cfg = &a.config.model;
        let c = ModelParams::seeded(cfg, a.vocab.len(), 4).unwrap();
        assert_ne!(c.model_hash(), a.model_hash());
    }

    #[test]
    fn trainable_sets_differ_by_architecture() {
        let mut c = tiny();
        let dec = c.params.trainable_mut(Architecture::Decoupled).len();
        let lin = c.params.trainable_mut(Architecture::DecoupledLinear).len();
        let cat = c.params.trainable_mut(Architecture::Concat).len();
        assert!(dec > lin && lin > cat);
    }
}
