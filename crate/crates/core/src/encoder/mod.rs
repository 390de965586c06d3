//! Tokenization and the two independent encoder stacks.
//!
//! The question stack runs online, once per question. The document stack
//! runs offline over the corpus and its outputs go to the encoding cache.
//! [`ConcatEncoderParams`] is the joint-sequence baseline, which has to
//! re-encode the question alongside every candidate document.

mod vocab;

pub use vocab::{tokenize, Role, TokenSequence, Vocab, CLS, PAD, SEP, UNK};

use std::collections::HashSet;
use std::sync::OnceLock;

use rand::Rng;

use crate::cache::{CacheKey, EncodingCache};
use crate::digest::Digest64;
use crate::error::{Error, Result};
use crate::tensor::block::{gather_rows, scatter_rows, unmasked_positions};
use crate::tensor::{kernels, BlockTrace, OpCounters, Tensor, TransformerBlockParams, INIT_STD};

/// Contextual encoding of one sequence: `L×d`, rows at and beyond
/// `true_length` are padding (zero) and masked downstream.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingMatrix {
    pub values: Tensor,
    pub role: Role,
    pub model_hash: u64,
    pub true_length: usize,
}

impl EncodingMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.rows()).map(|i| i < self.true_length).collect()
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.role == other.role
            && self.model_hash == other.model_hash
            && self.true_length == other.true_length
            && self.values.shape() == other.values.shape()
            && self.values.value_bytes().eq(other.values.value_bytes())
    }
}

/// One encoder: token and position embeddings followed by a block stack.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    role: Role,
    token_embedding: Tensor,
    position_embedding: Tensor,
    segment_embedding: Option<Tensor>,
    blocks: Vec<TransformerBlockParams>,
    digest: OnceLock<u64>,
}

pub struct EncoderTrace {
    positions: Vec<usize>,
    ids: Vec<u32>,
    segments: Option<Vec<u8>>,
    blocks: Vec<BlockTrace>,
}

#[allow(clippy::too_many_arguments)]
impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(
        role: Role,
        vocab_size: usize,
        max_len: usize,
        width: usize,
        heads: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if vocab_size < 4 || max_len < 2 {
            return Err(Error::invalid(format!(
                "encoder needs a vocabulary of at least 4 and max length of at least 2 (got {vocab_size}, {max_len})"
            )));
        }
        let token_embedding = Tensor::randn(&[vocab_size, width], INIT_STD, rng);
        let position_embedding = Tensor::randn(&[max_len, width], INIT_STD, rng);
        let segment_embedding = (role == Role::Pair).then(|| Tensor::randn(&[2, width], INIT_STD, rng));
        let blocks = (0..layers)
            .map(|_| TransformerBlockParams::new(width, heads, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            role,
            token_embedding,
            position_embedding,
            segment_embedding,
            blocks,
            digest: OnceLock::new(),
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn width(&self) -> usize {
        self.token_embedding.cols()
    }

    pub fn max_len(&self) -> usize {
        self.position_embedding.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embedding.rows()
    }

    pub fn layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn heads(&self) -> usize {
        self.blocks.first().map_or(1, TransformerBlockParams::heads)
    }

    pub fn blocks(&self) -> &[TransformerBlockParams] {
        &self.blocks
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        out.extend(self.segment_embedding.as_ref());
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out
    }

    /// Mutable access to every weight; invalidates the cached digest.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.digest = OnceLock::new();
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        out.extend(self.segment_embedding.as_mut());
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out
    }

    /// Digest of the role, shapes and every weight of this encoder.
    pub fn digest(&self) -> u64 {
        *self.digest.get_or_init(|| {
            let mut d = Digest64::new("encoder");
            d.u64(self.role as u64).u64(self.heads() as u64);
            for t in self.tensors() {
                d.tensor(t);
            }
            d.finish()
        })
    }

    fn check_sequence(&self, seq: &TokenSequence) -> Result<()> {
        if seq.role() != self.role {
            return Err(Error::invalid(format!(
                "{:?} encoder given a {:?} sequence",
                self.role,
                seq.role()
            )));
        }
        if seq.max_len() != self.max_len() {
            return Err(Error::invalid(format!(
                "sequence length {} differs from the encoder's {}",
                seq.max_len(),
                self.max_len()
            )));
        }
        if let Some(&bad) = seq.ids().iter().find(|&&id| id as usize >= self.vocab_size()) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary")));
        }
        Ok(())
    }

    fn embed(&self, ids: &[u32], positions: &[usize], segments: Option<&[u8]>) -> Vec<f32> {
        let d = self.width();
        let mut x = Vec::with_capacity(positions.len() * d);
        for &p in positions {
            let tok = self.token_embedding.row(ids[p] as usize);
            let pos = self.position_embedding.row(p);
            x.extend(tok.iter().zip(pos).map(|(a, b)| a + b));
        }
        if let (Some(table), Some(seg)) = (&self.segment_embedding, segments) {
            for (i, &p) in positions.iter().enumerate() {
                kernels::add_assign(&mut x[i * d..(i + 1) * d], table.row(seg[p] as usize));
            }
        }
        x
    }

    fn run(
        &self,
        ids: &[u32],
        mask: &[bool],
        segments: Option<&[u8]>,
        counters: &mut OpCounters,
    ) -> Result<(Tensor, EncoderTrace)> {
        let d = self.width();
        let positions = unmasked_positions(mask);
        if positions.is_empty() {
            return Err(Error::invalid("sequence has no real tokens"));
        }
        let mut x = self.embed(ids, &positions, segments);
        let mut traces = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, t) = b.forward(&x, positions.len(), counters);
            traces.push(t);
            x = y;
        }
        let values = Tensor::matrix(ids.len(), d, scatter_rows(&x, d, &positions, ids.len()))?;
        Ok((
            values,
            EncoderTrace {
                positions,
                ids: ids.to_vec(),
                segments: segments.map(<[u8]>::to_vec),
                blocks: traces,
            },
        ))
    }

    /// Encodes `seq` and keeps the activations needed by [`Self::backward`].
    pub fn forward_traced(
        &self,
        seq: &TokenSequence,
        counters: &mut OpCounters,
    ) -> Result<(EncodingMatrix, EncoderTrace)> {
        self.check_sequence(seq)?;
        let (values, trace) = self.run(seq.ids(), seq.mask(), None, counters)?;
        Ok((
            EncodingMatrix {
                values,
                role: self.role,
                model_hash: self.digest(),
                true_length: seq.true_length(),
            },
            trace,
        ))
    }

    pub fn encode(&self, seq: &TokenSequence, counters: &mut OpCounters) -> Result<EncodingMatrix> {
        self.forward_traced(seq, counters).map(|(enc, _)| enc)
    }

    /// Backpropagates `d_values` (`L×d`) through the stack into the weight
    /// gradients.
    pub fn backward(&mut self, trace: &EncoderTrace, d_values: &[f32]) {
        let d = self.width();
        let mut g = gather_rows(d_values, d, &trace.positions);
        for (b, t) in self.blocks.iter_mut().zip(&trace.blocks).rev() {
            g = b.backward(t, &g);
        }
        {
            let tok = self.token_embedding.grad_mut();
            for (i, &p) in trace.positions.iter().enumerate() {
                let id = trace.ids[p] as usize;
                kernels::add_assign(&mut tok[id * d..(id + 1) * d], &g[i * d..(i + 1) * d]);
            }
        }
        {
            let pos = self.position_embedding.grad_mut();
            for (i, &p) in trace.positions.iter().enumerate() {
                kernels::add_assign(&mut pos[p * d..(p + 1) * d], &g[i * d..(i + 1) * d]);
            }
        }
        if let (Some(table), Some(seg)) = (&mut self.segment_embedding, &trace.segments) {
            let sg = table.grad_mut();
            for (i, &p) in trace.positions.iter().enumerate() {
                let s = seg[p] as usize;
                kernels::add_assign(&mut sg[s * d..(s + 1) * d], &g[i * d..(i + 1) * d]);
            }
        }
    }
}

/// Runs the online question stack.
pub fn encode_question(
    q: &TokenSequence,
    params: &EncoderParams,
    counters: &mut OpCounters,
) -> Result<EncodingMatrix> {
    if q.role() != Role::Question || params.role() != Role::Question {
        return Err(Error::invalid("encode_question needs a question sequence and question encoder"));
    }
    params.encode(q, counters)
}

/// Runs the offline document stack.
pub fn encode_document(
    d: &TokenSequence,
    params: &EncoderParams,
    counters: &mut OpCounters,
) -> Result<EncodingMatrix> {
    if d.role() != Role::Document || params.role() != Role::Document {
        return Err(Error::invalid("encode_document needs a document sequence and document encoder"));
    }
    params.encode(d, counters)
}

/// Encodes every document not yet cached under the encoder's digest and
/// returns how many encodings were written.
pub fn precompute_corpus<'a, I>(
    docs: I,
    params: &EncoderParams,
    cache: &mut EncodingCache,
    counters: &mut OpCounters,
) -> Result<usize>
where
    I: IntoIterator<Item = (&'a str, &'a TokenSequence)>,
{
    let docs: Vec<_> = docs.into_iter().collect();
    let mut seen = HashSet::with_capacity(docs.len());
    let dupes: Vec<&str> = docs
        .iter()
        .filter(|(id, _)| !seen.insert(*id))
        .map(|(id, _)| *id)
        .collect();
    if !dupes.is_empty() {
        return Err(Error::DuplicateKey(format!("document ids {}", dupes.join(", "))));
    }
    let hash = params.digest();
    if cache.model_hash() != hash {
        return Err(Error::invalid(format!(
            "cache is bound to model {:016x}, encoder is {hash:016x}",
            cache.model_hash()
        )));
    }
    let mut written = 0;
    for (id, seq) in docs {
        let key = CacheKey::new(id, hash);
        if cache.contains(&key) {
            continue;
        }
        let enc = encode_document(seq, params, counters)?;
        cache.put(key, &enc)?;
        written += 1;
    }
    Ok(written)
}

/// The concatenated-input baseline: a single stack over
/// `CLS q… SEP CLS d… SEP` with segment embeddings.
#[derive(Clone, Debug)]
pub struct ConcatEncoderParams {
    pub encoder: EncoderParams,
}

pub struct ConcatTrace {
    pub encoder: EncoderTrace,
    pub doc_cls: usize,
}

impl ConcatEncoderParams {
    pub fn new<R: Rng + ?Sized>(
        vocab_size: usize,
        joint_max_len: usize,
        width: usize,
        heads: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            encoder: EncoderParams::new(Role::Pair, vocab_size, joint_max_len, width, heads, layers, rng)?,
        })
    }

    pub fn digest(&self) -> u64 {
        self.encoder.digest()
    }

    pub fn forward_traced(
        &self,
        q: &TokenSequence,
        d: &TokenSequence,
        counters: &mut OpCounters,
    ) -> Result<(EncodingMatrix, ConcatTrace)> {
        if q.role() != Role::Question || d.role() != Role::Document {
            return Err(Error::invalid("concat encoding needs (question, document) sequences"));
        }
        let joint = q.true_length() + d.true_length();
        let max = self.encoder.max_len();
        if joint > max {
            return Err(Error::invalid(format!(
                "joint length {joint} exceeds the configured maximum {max}"
            )));
        }
        let mut ids = Vec::with_capacity(max);
        ids.extend_from_slice(q.content());
        ids.extend_from_slice(d.content());
        ids.resize(max, PAD);
        let segments: Vec<u8> = (0..max).map(|i| u8::from(i >= q.true_length())).collect();
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.encoder.vocab_size()) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary")));
        }
        let seq = TokenSequence::from_parts(ids, Role::Pair, joint);
        let (values, trace) = self.encoder.run(seq.ids(), seq.mask(), Some(&segments), counters)?;
        Ok((
            EncodingMatrix {
                values,
                role: Role::Pair,
                model_hash: self.digest(),
                true_length: joint,
            },
            ConcatTrace {
                encoder: trace,
                doc_cls: q.true_length(),
            },
        ))
    }

    pub fn backward(&mut self, trace: &ConcatTrace, d_values: &[f32]) {
        self.encoder.backward(&trace.encoder, d_values);
    }
}

/// Encodes the joint sequence. The document's CLS sits at row
/// `q.true_length()`.
pub fn encode_pair_concat(
    q: &TokenSequence,
    d: &TokenSequence,
    params: &ConcatEncoderParams,
    counters: &mut OpCounters,
) -> Result<EncodingMatrix> {
    params.forward_traced(q, d, counters).map(|(e, _)| e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(role: Role, max_len: usize, layers: usize, seed: u64) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderParams::new(role, 50, max_len, 16, 4, layers, &mut rng).unwrap()
    }

    fn seq(content: &[u32], role: Role, max_len: usize) -> TokenSequence {
        TokenSequence::from_content_ids(content, role, max_len).unwrap()
    }

    #[test]
    fn question_encoding_is_deterministic() {
        let p = encoder(Role::Question, 8, 2, 1);
        let q = seq(&[5, 6, 7], Role::Question, 8);
        let a = encode_question(&q, &p, &mut OpCounters::default()).unwrap();
        let b = encode_question(&q, &p, &mut OpCounters::default()).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(a.true_length, 5);
        assert!(a.values.row(6).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cost_depends_only_on_length() {
        let p = encoder(Role::Question, 8, 2, 1);
        let mut c1 = OpCounters::default();
        let mut c2 = OpCounters::default();
        encode_question(&seq(&[5, 6, 7], Role::Question, 8), &p, &mut c1).unwrap();
        encode_question(&seq(&[9, 10, 11], Role::Question, 8), &p, &mut c2).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(c1.attention_pairs, 2 * 4 * 5 * 5);
    }

    #[test]
    fn role_mismatch_is_rejected() {
        let p = encoder(Role::Question, 8, 1, 1);
        let d = seq(&[5], Role::Document, 8);
        assert!(matches!(
            encode_question(&d, &p, &mut OpCounters::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn digest_tracks_weights() {
        let mut p = encoder(Role::Document, 8, 2, 3);
        let before = p.digest();
        assert_eq!(before, p.clone().digest());
        p.tensors_mut().last_mut().unwrap().data_mut()[0] += 1e-3;
        assert_ne!(before, p.digest());
        assert_ne!(before, encoder(Role::Document, 8, 2, 4).digest());
    }

    #[test]
    fn concat_rejects_overlong_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ConcatEncoderParams::new(50, 10, 16, 4, 1, &mut rng).unwrap();
        let q = seq(&[5, 6, 7], Role::Question, 8);
        let d = seq(&[5, 6, 7, 8, 9, 10], Role::Document, 8);
        assert!(matches!(
            encode_pair_concat(&q, &d, &p, &mut OpCounters::default()),
            Err(Error::InvalidInput(_))
        ));
        let d = seq(&[5, 6], Role::Document, 8);
        let mut c = OpCounters::default();
        let e = encode_pair_concat(&q, &d, &p, &mut c).unwrap();
        assert_eq!(e.true_length, 9);
        assert_eq!(c.attention_pairs, 4 * 81);
    }
}
