//! Independent f64 reference implementations used as test oracles.

use std::collections::BTreeSet;

use decoupled_rerank::tensor::TransformerBlockParams;

pub const LN_EPS: f64 = 1e-5;

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// `a` is m×k, `b` is k×n, both row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
        }
    }
    out
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let w = gain.len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(w) {
        let mean = row.iter().sum::<f64>() / w as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w as f64;
        let s = (var + LN_EPS).sqrt();
        out.extend(row.iter().enumerate().map(|(j, v)| (v - mean) / s * gain[j] + bias[j]));
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

/// Parameters of one block in f64, in the order of
/// `TransformerBlockParams::tensors`.
#[derive(Clone)]
pub struct Block {
    pub d: usize,
    pub heads: usize,
    pub p: Vec<Vec<f64>>,
}

impl Block {
    pub fn from_params(params: &TransformerBlockParams) -> Self {
        Self {
            d: params.width(),
            heads: params.heads(),
            p: params.tensors().iter().map(|t| to_f64(t.data())).collect(),
        }
    }

    /// Multi-head attention including the output projection.
    pub fn attention(&self, x: &[f64], n: usize) -> Vec<f64> {
        let (d, h) = (self.d, self.heads);
        let dh = d / h;
        let q = matmul(x, &self.p[0], n, d, d);
        let k = matmul(x, &self.p[1], n, d, d);
        let v = matmul(x, &self.p[2], n, d, d);
        let mut ctx = vec![0.0; n * d];
        for head in 0..h {
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..dh).map(|c| q[i * d + head * dh + c] * k[j * d + head * dh + c]).sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let probs = softmax(&scores);
                for c in 0..dh {
                    ctx[i * d + head * dh + c] = (0..n).map(|j| probs[j] * v[j * d + head * dh + c]).sum();
                }
            }
        }
        matmul(&ctx, &self.p[3], n, d, d)
    }

    /// Post-norm block: attention, residual, norm, GELU feed-forward,
    /// residual, norm.
    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let d = self.d;
        let a = self.attention(x, n);
        let r1: Vec<f64> = a.iter().zip(x).map(|(a, b)| a + b).collect();
        let h1 = layer_norm(&r1, &self.p[8], &self.p[9]);
        let mut pre = matmul(&h1, &self.p[4], n, d, 4 * d);
        for (i, v) in pre.iter_mut().enumerate() {
            *v = gelu(*v + self.p[5][i % (4 * d)]);
        }
        let mut r2 = matmul(&pre, &self.p[6], n, 4 * d, d);
        for (i, v) in r2.iter_mut().enumerate() {
            *v += self.p[7][i % d] + h1[i];
        }
        layer_norm(&r2, &self.p[10], &self.p[11])
    }
}

/// Central difference of `f` with respect to every coordinate of `x`.
pub fn numeric_grad(x: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let up = f(&x);
            x[i] = orig - eps;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

pub fn weighted_sum(y: &[f64], w: &[f64]) -> f64 {
    y.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(floor)
}

/// Set-based reference metrics for one question: `lists` are ranked doc
/// ids, `relevant` the answer-bearing ids.
pub fn hit(list: &[String], relevant: &BTreeSet<String>, n: usize) -> bool {
    let top: BTreeSet<&String> = list.iter().take(n).collect();
    top.iter().any(|d| relevant.contains(*d))
}

/// Answer-bearing docs in `a`'s top-N that are absent from `b`'s top-N.
pub fn surfaces_beyond(a: &[String], b: &[String], relevant: &BTreeSet<String>, n: usize) -> bool {
    let top_a: BTreeSet<&String> = a.iter().take(n).filter(|d| relevant.contains(*d)).collect();
    let top_b: BTreeSet<&String> = b.iter().take(n).collect();
    !top_a.is_subset(&top_b)
}
