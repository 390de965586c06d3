//! Multi-head self-attention and the post-norm Transformer block.
//!
//! The block works on "compact" inputs that hold only unmasked rows. The
//! mask-aware entry points [`self_attention`] and [`transformer_block`]
//! gather the unmasked rows, run the compact computation and scatter the
//! result back, leaving masked rows at zero. Masked keys therefore never
//! enter a softmax, which is the same as giving them a score of -inf.

use rand::Rng;

use super::ops::{gelu, gelu_grad, layer_norm_backward_rows, layer_norm_rows, softmax_backward, softmax_in_place};
use super::{kernels, LayerNormTrace, OpCounters, Tensor, INIT_STD};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlockParams {
    heads: usize,
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub output: Tensor,
    pub ff_in: Tensor,
    pub ff_in_bias: Tensor,
    pub ff_out: Tensor,
    pub ff_out_bias: Tensor,
    pub attn_norm_gain: Tensor,
    pub attn_norm_bias: Tensor,
    pub ff_norm_gain: Tensor,
    pub ff_norm_bias: Tensor,
}

impl TransformerBlockParams {
    pub fn new<R: Rng + ?Sized>(d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if d == 0 || heads == 0 || d % heads != 0 {
            return Err(Error::invalid(format!(
                "model width {d} must be a positive multiple of the head count {heads}"
            )));
        }
        Ok(Self {
            heads,
            query: Tensor::randn(&[d, d], INIT_STD, rng),
            key: Tensor::randn(&[d, d], INIT_STD, rng),
            value: Tensor::randn(&[d, d], INIT_STD, rng),
            output: Tensor::randn(&[d, d], INIT_STD, rng),
            ff_in: Tensor::randn(&[d, 4 * d], INIT_STD, rng),
            ff_in_bias: Tensor::zeros(&[4 * d]),
            ff_out: Tensor::randn(&[4 * d, d], INIT_STD, rng),
            ff_out_bias: Tensor::zeros(&[d]),
            attn_norm_gain: Tensor::filled(&[d], 1.0),
            attn_norm_bias: Tensor::zeros(&[d]),
            ff_norm_gain: Tensor::filled(&[d], 1.0),
            ff_norm_bias: Tensor::zeros(&[d]),
        })
    }

    pub fn width(&self) -> usize {
        self.query.cols()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.query,
            &self.key,
            &self.value,
            &self.output,
            &self.ff_in,
            &self.ff_in_bias,
            &self.ff_out,
            &self.ff_out_bias,
            &self.attn_norm_gain,
            &self.attn_norm_bias,
            &self.ff_norm_gain,
            &self.ff_norm_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.output,
            &mut self.ff_in,
            &mut self.ff_in_bias,
            &mut self.ff_out,
            &mut self.ff_out_bias,
            &mut self.attn_norm_gain,
            &mut self.attn_norm_bias,
            &mut self.ff_norm_gain,
            &mut self.ff_norm_bias,
        ]
    }

    /// Attention over `n` compact rows of `x` (all unmasked).
    pub fn attention_forward(
        &self,
        x: &[f32],
        n: usize,
        counters: &mut OpCounters,
    ) -> (Vec<f32>, AttentionTrace) {
        let d = self.width();
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f32).sqrt();

        let mut q = vec![0.0; n * d];
        let mut k = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        kernels::matmul(x, self.query.data(), n, d, d, &mut q);
        kernels::matmul(x, self.key.data(), n, d, d, &mut k);
        kernels::matmul(x, self.value.data(), n, d, d, &mut v);

        let mut probs = vec![0.0; h * n * n];
        let mut ctx = vec![0.0; n * d];
        for head in 0..h {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..n {
                let qi = &q[i * d..(i + 1) * d][cols.clone()];
                let row = &mut probs[(head * n + i) * n..(head * n + i + 1) * n];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = kernels::dot(qi, &k[j * d..(j + 1) * d][cols.clone()]) * scale;
                }
                softmax_in_place(row);
                let ci = &mut ctx[i * d..(i + 1) * d][cols.clone()];
                for (j, &p) in row.iter().enumerate() {
                    for (c, &vv) in ci.iter_mut().zip(&v[j * d..(j + 1) * d][cols.clone()]) {
                        *c += p * vv;
                    }
                }
            }
        }

        let mut out = vec![0.0; n * d];
        kernels::matmul(&ctx, self.output.data(), n, d, d, &mut out);

        counters.attention_pairs += (h * n * n) as u64;
        counters.macs += (4 * n * d * d) as u64;
        (
            out,
            AttentionTrace {
                rows: n,
                input: x.to_vec(),
                q,
                k,
                v,
                probs,
                ctx,
            },
        )
    }

    /// Accumulates projection gradients and returns the input gradient.
    pub fn attention_backward(&mut self, trace: &AttentionTrace, dout: &[f32]) -> Vec<f32> {
        let d = self.width();
        let h = self.heads;
        let dh = d / h;
        let n = trace.rows;
        let scale = 1.0 / (dh as f32).sqrt();

        let mut dctx = vec![0.0; n * d];
        kernels::matmul_a_bt_acc(dout, self.output.data(), n, d, d, &mut dctx);
        kernels::matmul_at_b_acc(&trace.ctx, dout, n, d, d, self.output.grad_mut());

        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; n];
        let mut ds = vec![0.0; n];
        for head in 0..h {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..n {
                let p_row = &trace.probs[(head * n + i) * n..(head * n + i + 1) * n];
                let dci = &dctx[i * d..(i + 1) * d][cols.clone()];
                for j in 0..n {
                    let vj = &trace.v[j * d..(j + 1) * d][cols.clone()];
                    dp[j] = kernels::dot(dci, vj);
                    let dvj = &mut dv[j * d..(j + 1) * d][cols.clone()];
                    for (g, &c) in dvj.iter_mut().zip(dci) {
                        *g += p_row[j] * c;
                    }
                }
                softmax_backward(p_row, &dp, &mut ds);
                let qi = &trace.q[i * d..(i + 1) * d][cols.clone()];
                for j in 0..n {
                    let s = ds[j] * scale;
                    let kj = &trace.k[j * d..(j + 1) * d][cols.clone()];
                    let dqi = &mut dq[i * d..(i + 1) * d][cols.clone()];
                    for (g, &kv) in dqi.iter_mut().zip(kj) {
                        *g += s * kv;
                    }
                    let dkj = &mut dk[j * d..(j + 1) * d][cols.clone()];
                    for (g, &qv) in dkj.iter_mut().zip(qi) {
                        *g += s * qv;
                    }
                }
            }
        }

        let x = &trace.input;
        kernels::matmul_at_b_acc(x, &dq, n, d, d, self.query.grad_mut());
        kernels::matmul_at_b_acc(x, &dk, n, d, d, self.key.grad_mut());
        kernels::matmul_at_b_acc(x, &dv, n, d, d, self.value.grad_mut());
        let mut dx = vec![0.0; n * d];
        kernels::matmul_a_bt_acc(&dq, self.query.data(), n, d, d, &mut dx);
        kernels::matmul_a_bt_acc(&dk, self.key.data(), n, d, d, &mut dx);
        kernels::matmul_a_bt_acc(&dv, self.value.data(), n, d, d, &mut dx);
        dx
    }

    /// Full block over `n` compact rows: attention, residual, norm,
    /// feed-forward, residual, norm.
    pub fn forward(&self, x: &[f32], n: usize, counters: &mut OpCounters) -> (Vec<f32>, BlockTrace) {
        let d = self.width();
        let (attn, attention) = self.attention_forward(x, n, counters);
        let mut r1 = attn;
        kernels::add_assign(&mut r1, x);
        let (h1, norm1) = layer_norm_rows(&r1, self.attn_norm_gain.data(), self.attn_norm_bias.data());

        let mut ff_pre = vec![0.0; n * 4 * d];
        kernels::matmul(&h1, self.ff_in.data(), n, d, 4 * d, &mut ff_pre);
        kernels::add_row_bias(&mut ff_pre, self.ff_in_bias.data());
        let ff_act: Vec<f32> = ff_pre.iter().map(|&v| gelu(v)).collect();
        let mut r2 = vec![0.0; n * d];
        kernels::matmul(&ff_act, self.ff_out.data(), n, 4 * d, d, &mut r2);
        kernels::add_row_bias(&mut r2, self.ff_out_bias.data());
        kernels::add_assign(&mut r2, &h1);
        let (out, norm2) = layer_norm_rows(&r2, self.ff_norm_gain.data(), self.ff_norm_bias.data());
        counters.macs += (8 * n * d * d) as u64;

        (
            out,
            BlockTrace {
                attention,
                norm1,
                h1,
                ff_pre,
                ff_act,
                norm2,
            },
        )
    }

    pub fn backward(&mut self, trace: &BlockTrace, dout: &[f32]) -> Vec<f32> {
        let d = self.width();
        let n = trace.attention.rows;

        let dr2 = {
            let (gain, dgain) = self.ff_norm_gain.data_and_grad_mut();
            layer_norm_backward_rows(&trace.norm2, gain, dgain, self.ff_norm_bias.grad_mut(), dout)
        };
        kernels::acc_col_sums(&dr2, self.ff_out_bias.grad_mut());
        kernels::matmul_at_b_acc(&trace.ff_act, &dr2, n, 4 * d, d, self.ff_out.grad_mut());
        let mut d_act = vec![0.0; n * 4 * d];
        kernels::matmul_a_bt_acc(&dr2, self.ff_out.data(), n, d, 4 * d, &mut d_act);
        for (g, &pre) in d_act.iter_mut().zip(&trace.ff_pre) {
            *g *= gelu_grad(pre);
        }
        kernels::acc_col_sums(&d_act, self.ff_in_bias.grad_mut());
        kernels::matmul_at_b_acc(&trace.h1, &d_act, n, d, 4 * d, self.ff_in.grad_mut());
        let mut dh1 = dr2;
        kernels::matmul_a_bt_acc(&d_act, self.ff_in.data(), n, 4 * d, d, &mut dh1);

        let dr1 = {
            let (gain, dgain) = self.attn_norm_gain.data_and_grad_mut();
            layer_norm_backward_rows(&trace.norm1, gain, dgain, self.attn_norm_bias.grad_mut(), &dh1)
        };
        let mut dx = self.attention_backward(&trace.attention, &dr1);
        kernels::add_assign(&mut dx, &dr1);
        dx
    }
}

#[derive(Clone, Debug)]
pub struct AttentionTrace {
    rows: usize,
    input: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    probs: Vec<f32>,
    ctx: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct BlockTrace {
    attention: AttentionTrace,
    norm1: LayerNormTrace,
    h1: Vec<f32>,
    ff_pre: Vec<f32>,
    ff_act: Vec<f32>,
    norm2: LayerNormTrace,
}

/// Positions whose mask entry is `true` (real tokens).
pub(crate) fn unmasked_positions(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

pub(crate) fn gather_rows(x: &[f32], width: usize, rows: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&x[r * width..(r + 1) * width]);
    }
    out
}

pub(crate) fn scatter_rows(compact: &[f32], width: usize, rows: &[usize], total: usize) -> Vec<f32> {
    let mut out = vec![0.0; total * width];
    for (i, &r) in rows.iter().enumerate() {
        out[r * width..(r + 1) * width].copy_from_slice(&compact[i * width..(i + 1) * width]);
    }
    out
}

fn check_masked_input(op: &'static str, x: &Tensor, mask: &[bool], d: usize) -> Result<Vec<usize>> {
    if x.shape().len() != 2 || x.cols() != d || mask.len() != x.rows() {
        return Err(Error::Dimension {
            op,
            left: x.shape().to_vec(),
            right: vec![mask.len(), d],
        });
    }
    let valid = unmasked_positions(mask);
    if valid.is_empty() {
        return Err(Error::invalid(format!("{op}: every position is padding")));
    }
    Ok(valid)
}

/// Multi-head self-attention (including the output projection) over an
/// `L×d` input. `mask[i]` is `true` for real tokens; masked rows of the
/// result are zero.
pub fn self_attention(
    x: &Tensor,
    mask: &[bool],
    params: &TransformerBlockParams,
    counters: &mut OpCounters,
) -> Result<Tensor> {
    let d = params.width();
    let valid = check_masked_input("self_attention", x, mask, d)?;
    let compact = gather_rows(x.data(), d, &valid);
    let (out, _) = params.attention_forward(&compact, valid.len(), counters);
    Tensor::new(x.shape().to_vec(), scatter_rows(&out, d, &valid, x.rows()))
}

/// One post-norm Transformer block over an `L×d` input; masked rows of the
/// result are zero.
pub fn transformer_block(
    x: &Tensor,
    mask: &[bool],
    params: &TransformerBlockParams,
    counters: &mut OpCounters,
) -> Result<Tensor> {
    let d = params.width();
    let valid = check_masked_input("transformer_block", x, mask, d)?;
    let compact = gather_rows(x.data(), d, &valid);
    let (out, _) = params.forward(&compact, valid.len(), counters);
    Tensor::new(x.shape().to_vec(), scatter_rows(&out, d, &valid, x.rows()))
}
