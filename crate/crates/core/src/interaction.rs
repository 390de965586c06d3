//! Question-document interaction over the two independent encodings.
//!
//! The question rows and document rows are stacked (question first), each
//! row receives its global position embedding plus the question or document
//! type embedding, and `K` Transformer blocks run over the joint sequence
//! under the union of both padding masks. The two CLS rows (global positions
//! `0` and `Lq`) are the output.

use rand::Rng;

use crate::digest::Digest64;
use crate::encoder::{EncodingMatrix, Role};
use crate::error::{Error, Result};
use crate::tensor::block::{gather_rows, scatter_rows, unmasked_positions};
use crate::tensor::{kernels, BlockTrace, OpCounters, Tensor, TransformerBlockParams, INIT_STD};

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalEmbeddings {
    /// `(Lq+Ld)×d`, one row per global position.
    pub position: Tensor,
    pub type_question: Tensor,
    pub type_document: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionParams {
    pub global: GlobalEmbeddings,
    pub blocks: Vec<TransformerBlockParams>,
    question_len: usize,
}

/// CLS rows of the question and the document after interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct PairOutput {
    pub o_cls: Vec<f32>,
    pub o_cls_doc: Vec<f32>,
}

impl PairOutput {
    pub fn concat(&self) -> Vec<f32> {
        let mut v = self.o_cls.clone();
        v.extend_from_slice(&self.o_cls_doc);
        v
    }
}

pub struct InteractionTrace {
    positions: Vec<usize>,
    blocks: Vec<BlockTrace>,
    doc_cls: usize,
}

fn check_pair(q: &EncodingMatrix, d: &EncodingMatrix) -> Result<()> {
    if q.role != Role::Question || d.role != Role::Document {
        return Err(Error::invalid(format!(
            "interaction expects (question, document) encodings, got ({:?}, {:?})",
            q.role, d.role
        )));
    }
    if q.width() != d.width() {
        return Err(Error::Dimension {
            op: "interact",
            left: q.values.shape().to_vec(),
            right: d.values.shape().to_vec(),
        });
    }
    if q.true_length == 0 || d.true_length == 0 {
        return Err(Error::invalid("encodings must hold at least their CLS row"));
    }
    Ok(())
}

impl InteractionParams {
    pub fn new<R: Rng + ?Sized>(
        question_len: usize,
        document_len: usize,
        width: usize,
        heads: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::invalid("the interaction stack needs at least one layer"));
        }
        if question_len == 0 || document_len == 0 {
            return Err(Error::invalid("sequence lengths must be positive"));
        }
        let global = GlobalEmbeddings {
            position: Tensor::randn(&[question_len + document_len, width], INIT_STD, rng),
            type_question: Tensor::randn(&[width], INIT_STD, rng),
            type_document: Tensor::randn(&[width], INIT_STD, rng),
        };
        let blocks = (0..layers)
            .map(|_| TransformerBlockParams::new(width, heads, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            global,
            blocks,
            question_len,
        })
    }

    pub fn layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn width(&self) -> usize {
        self.global.position.cols()
    }

    pub fn question_len(&self) -> usize {
        self.question_len
    }

    pub fn joint_len(&self) -> usize {
        self.global.position.rows()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![
            &self.global.position,
            &self.global.type_question,
            &self.global.type_document,
        ];
        for b in &self.blocks {
            v.extend(b.tensors());
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![
            &mut self.global.position,
            &mut self.global.type_question,
            &mut self.global.type_document,
        ];
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v
    }

    pub fn digest(&self) -> u64 {
        let mut d = Digest64::new("interaction");
        d.u64(self.layers() as u64).u64(self.question_len as u64);
        for t in self.tensors() {
            d.tensor(t);
        }
        d.finish()
    }

    fn check_shapes(&self, q: &EncodingMatrix, d: &EncodingMatrix) -> Result<()> {
        check_pair(q, d)?;
        if q.width() != self.width() || q.rows() != self.question_len || q.rows() + d.rows() != self.joint_len() {
            return Err(Error::Dimension {
                op: "interact",
                left: vec![q.rows(), d.rows(), q.width()],
                right: vec![self.question_len, self.joint_len() - self.question_len, self.width()],
            });
        }
        Ok(())
    }

    /// The `(Lq+Ld)×d` input of the first interaction block: stacked
    /// encodings plus global position and type embeddings.
    pub fn input(&self, q: &EncodingMatrix, d: &EncodingMatrix) -> Result<Tensor> {
        self.check_shapes(q, d)?;
        let w = self.width();
        let mut x = Vec::with_capacity(self.joint_len() * w);
        x.extend_from_slice(q.values.data());
        x.extend_from_slice(d.values.data());
        for (i, row) in x.chunks_exact_mut(w).enumerate() {
            kernels::add_assign(row, self.global.position.row(i));
            let ty = if i < self.question_len {
                &self.global.type_question
            } else {
                &self.global.type_document
            };
            kernels::add_assign(row, ty.data());
        }
        Tensor::matrix(self.joint_len(), w, x)
    }

    /// Joint padding mask: the question mask followed by the document mask.
    pub fn joint_mask(q: &EncodingMatrix, d: &EncodingMatrix) -> Vec<bool> {
        let mut m = q.mask();
        m.extend(d.mask());
        m
    }

    pub fn forward_traced(
        &self,
        q: &EncodingMatrix,
        d: &EncodingMatrix,
        counters: &mut OpCounters,
    ) -> Result<(PairOutput, InteractionTrace)> {
        let w = self.width();
        let input = self.input(q, d)?;
        let positions = unmasked_positions(&Self::joint_mask(q, d));
        let mut x = gather_rows(input.data(), w, &positions);
        let mut traces = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, t) = b.forward(&x, positions.len(), counters);
            traces.push(t);
            x = y;
        }
        // The question's unmasked rows come first, so its CLS is compact row 0
        // and the document CLS follows the question's true length.
        let doc_cls = q.true_length;
        debug_assert_eq!(positions[doc_cls], self.question_len);
        Ok((
            PairOutput {
                o_cls: x[..w].to_vec(),
                o_cls_doc: x[doc_cls * w..(doc_cls + 1) * w].to_vec(),
            },
            InteractionTrace {
                positions,
                blocks: traces,
                doc_cls,
            },
        ))
    }

    /// Returns gradients w.r.t. the question and document encodings.
    pub fn backward(
        &mut self,
        trace: &InteractionTrace,
        d_cls_question: &[f32],
        d_cls_document: &[f32],
    ) -> (Vec<f32>, Vec<f32>) {
        let w = self.width();
        let mut g = vec![0.0; trace.positions.len() * w];
        g[..w].copy_from_slice(d_cls_question);
        kernels::add_assign(&mut g[trace.doc_cls * w..(trace.doc_cls + 1) * w], d_cls_document);
        for (b, t) in self.blocks.iter_mut().zip(&trace.blocks).rev() {
            g = b.backward(t, &g);
        }
        let full = scatter_rows(&g, w, &trace.positions, self.joint_len());
        kernels::add_assign(self.global.position.grad_mut(), &full);
        for &p in &trace.positions {
            let row = &full[p * w..(p + 1) * w];
            let ty = if p < self.question_len {
                &mut self.global.type_question
            } else {
                &mut self.global.type_document
            };
            kernels::add_assign(ty.grad_mut(), row);
        }
        let (dq, dd) = full.split_at(self.question_len * w);
        (dq.to_vec(), dd.to_vec())
    }
}

pub fn interact(
    q: &EncodingMatrix,
    d: &EncodingMatrix,
    params: &InteractionParams,
    counters: &mut OpCounters,
) -> Result<PairOutput> {
    params.forward_traced(q, d, counters).map(|(o, _)| o)
}

/// Interaction ablation: a separate affine map on each CLS row and no
/// cross-token attention.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearInteractionParams {
    pub question_map: Tensor,
    pub question_bias: Tensor,
    pub document_map: Tensor,
    pub document_bias: Tensor,
}

pub struct LinearTrace {
    q_cls: Vec<f32>,
    d_cls: Vec<f32>,
}

impl LinearInteractionParams {
    pub fn new<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        Self {
            question_map: Tensor::randn(&[width, width], INIT_STD, rng),
            question_bias: Tensor::zeros(&[width]),
            document_map: Tensor::randn(&[width, width], INIT_STD, rng),
            document_bias: Tensor::zeros(&[width]),
        }
    }

    pub fn width(&self) -> usize {
        self.question_map.cols()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.question_map, &self.question_bias, &self.document_map, &self.document_bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.question_map,
            &mut self.question_bias,
            &mut self.document_map,
            &mut self.document_bias,
        ]
    }

    pub fn forward_traced(
        &self,
        q: &EncodingMatrix,
        d: &EncodingMatrix,
        counters: &mut OpCounters,
    ) -> Result<(PairOutput, LinearTrace)> {
        check_pair(q, d)?;
        let w = self.width();
        if q.width() != w {
            return Err(Error::Dimension {
                op: "interact_linear",
                left: q.values.shape().to_vec(),
                right: self.question_map.shape().to_vec(),
            });
        }
        let affine = |x: &[f32], map: &Tensor, bias: &Tensor| {
            let mut out = bias.data().to_vec();
            kernels::matmul_acc(x, map.data(), 1, w, w, &mut out);
            out
        };
        let q_cls = q.values.row(0).to_vec();
        let d_cls = d.values.row(0).to_vec();
        counters.macs += (2 * w * w) as u64;
        Ok((
            PairOutput {
                o_cls: affine(&q_cls, &self.question_map, &self.question_bias),
                o_cls_doc: affine(&d_cls, &self.document_map, &self.document_bias),
            },
            LinearTrace { q_cls, d_cls },
        ))
    }

    /// Returns gradients w.r.t. the question and document CLS rows.
    pub fn backward(&mut self, trace: &LinearTrace, d_o_cls: &[f32], d_o_cls_doc: &[f32]) -> (Vec<f32>, Vec<f32>) {
        let w = self.width();
        let mut dq = vec![0.0; w];
        let mut dd = vec![0.0; w];
        kernels::matmul_at_b_acc(&trace.q_cls, d_o_cls, 1, w, w, self.question_map.grad_mut());
        kernels::add_assign(self.question_bias.grad_mut(), d_o_cls);
        kernels::matmul_a_bt_acc(d_o_cls, self.question_map.data(), 1, w, w, &mut dq);
        kernels::matmul_at_b_acc(&trace.d_cls, d_o_cls_doc, 1, w, w, self.document_map.grad_mut());
        kernels::add_assign(self.document_bias.grad_mut(), d_o_cls_doc);
        kernels::matmul_a_bt_acc(d_o_cls_doc, self.document_map.data(), 1, w, w, &mut dd);
        (dq, dd)
    }
}

pub fn interact_linear(
    q: &EncodingMatrix,
    d: &EncodingMatrix,
    params: &LinearInteractionParams,
    counters: &mut OpCounters,
) -> Result<PairOutput> {
    params.forward_traced(q, d, counters).map(|(o, _)| o)
}
