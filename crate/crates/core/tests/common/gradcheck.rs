//! Finite-difference gradient checks.
//!
//! Tensor ops are compared against central differences of the f64 reference
//! implementations in `oracle`; the full model is compared against central
//! differences of its own f32 forward pass on sampled parameters.

use super::oracle::{self, numeric_grad, rel_err, to_f64, weighted_sum, Block};
use decoupled_rerank::config::{Architecture, ModelConfig};
use decoupled_rerank::encoder::{Role, TokenSequence};
use decoupled_rerank::model::ModelParams;
use decoupled_rerank::tensor::{
    layer_norm, layer_norm_backward, matmul, matmul_backward, softmax_backward, softmax_rows, gelu_grad,
    OpCounters, Tensor, TransformerBlockParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: u64 = 20;
pub const OP_TOL: f64 = 1e-3;
pub const MODEL_TOL: f64 = 1e-2;
const FD_EPS: f64 = 1e-5;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    Tensor::new(shape.to_vec(), rand_vec(rng, shape.iter().product(), scale)).unwrap()
}

fn grad_f64(t: &Tensor) -> Vec<f64> {
    to_f64(t.grad().expect("gradient was never written"))
}

pub fn check_matmul(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, k, n) = (3, 5, 4);
    let mut a = rand_tensor(&mut rng, &[m, k], 1.0);
    let mut b = rand_tensor(&mut rng, &[k, n], 1.0);
    let w = rand_vec(&mut rng, m * n, 1.0);
    matmul_backward(&mut a, &mut b, &w).unwrap();
    let (a64, b64, w64) = (to_f64(a.data()), to_f64(b.data()), to_f64(&w));
    let da = numeric_grad(&a64, FD_EPS, |x| weighted_sum(&oracle::matmul(x, &b64, m, k, n), &w64));
    let db = numeric_grad(&b64, FD_EPS, |x| weighted_sum(&oracle::matmul(&a64, x, m, k, n), &w64));
    // The forward pass must match the oracle too.
    let y = matmul(&a, &b).unwrap();
    let fwd = rel_err(&to_f64(y.data()), &oracle::matmul(&a64, &b64, m, k, n), 1e-12);
    rel_err(&grad_f64(&a), &da, 1e-12)
        .max(rel_err(&grad_f64(&b), &db, 1e-12))
        .max(fwd)
}

pub fn check_softmax(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 7;
    let x = rand_tensor(&mut rng, &[1, n], 3.0);
    let w = rand_vec(&mut rng, n, 1.0);
    let y = softmax_rows(&x);
    let mut dx = vec![0.0; n];
    softmax_backward(y.data(), &w, &mut dx);
    let w64 = to_f64(&w);
    let numeric = numeric_grad(&to_f64(x.data()), FD_EPS, |x| weighted_sum(&oracle::softmax(x), &w64));
    rel_err(&to_f64(&dx), &numeric, 1e-12).max(rel_err(&to_f64(y.data()), &oracle::softmax(&to_f64(x.data())), 1e-12))
}

pub fn check_layer_norm(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, w) = (3, 6);
    let x = rand_tensor(&mut rng, &[rows, w], 2.0);
    let mut gain = rand_tensor(&mut rng, &[w], 1.5);
    let mut bias = rand_tensor(&mut rng, &[w], 0.5);
    let dout = rand_vec(&mut rng, rows * w, 1.0);
    let (_, trace) = layer_norm(&x, &gain, &bias).unwrap();
    let dx = layer_norm_backward(&trace, &mut gain, &mut bias, &dout);
    let (x64, g64, b64, w64) = (to_f64(x.data()), to_f64(gain.data()), to_f64(bias.data()), to_f64(&dout));
    let ndx = numeric_grad(&x64, FD_EPS, |x| weighted_sum(&oracle::layer_norm(x, &g64, &b64), &w64));
    let ndg = numeric_grad(&g64, FD_EPS, |g| weighted_sum(&oracle::layer_norm(&x64, g, &b64), &w64));
    let ndb = numeric_grad(&b64, FD_EPS, |b| weighted_sum(&oracle::layer_norm(&x64, &g64, b), &w64));
    rel_err(&to_f64(&dx), &ndx, 1e-12)
        .max(rel_err(&grad_f64(&gain), &ndg, 1e-12))
        .max(rel_err(&grad_f64(&bias), &ndb, 1e-12))
}

pub fn check_gelu(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_vec(&mut rng, 16, 4.0);
    let analytic: Vec<f64> = x.iter().map(|&v| gelu_grad(v) as f64).collect();
    let numeric: Vec<f64> = x
        .iter()
        .map(|&v| {
            let v = v as f64;
            (oracle::gelu(v + FD_EPS) - oracle::gelu(v - FD_EPS)) / (2.0 * FD_EPS)
        })
        .collect();
    rel_err(&analytic, &numeric, 1e-12)
}

fn random_block(rng: &mut ChaCha8Rng, d: usize, heads: usize) -> TransformerBlockParams {
    let mut p = TransformerBlockParams::new(d, heads, rng).unwrap();
    // Non-trivial norms and biases so every parameter carries gradient.
    for t in p.tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&rand_vec(rng, n, 0.5));
    }
    for t in [&mut p.attn_norm_gain, &mut p.ff_norm_gain] {
        for v in t.data_mut() {
            *v += 1.0;
        }
    }
    p
}

/// Checks the attention sublayer and the full block against the oracle,
/// for both the input and every parameter.
pub fn check_block(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, heads) = (5, 8, 2);
    let mut block = random_block(&mut rng, d, heads);
    let x = rand_vec(&mut rng, n * d, 1.0);
    let w = rand_vec(&mut rng, n * d, 1.0);
    let (x64, w64) = (to_f64(&x), to_f64(&w));
    let oracle = Block::from_params(&block);
    let mut worst = 0.0f64;

    // Attention sublayer.
    let mut counters = OpCounters::default();
    let (attn, atrace) = block.attention_forward(&x, n, &mut counters);
    worst = worst.max(rel_err(&to_f64(&attn), &oracle.attention(&x64, n), 1e-12));
    for t in block.tensors_mut() {
        t.zero_grad();
    }
    let dx = block.attention_backward(&atrace, &w);
    let ndx = numeric_grad(&x64, FD_EPS, |x| weighted_sum(&oracle.attention(x, n), &w64));
    worst = worst.max(rel_err(&to_f64(&dx), &ndx, 1e-12));
    for i in 0..4 {
        let numeric = numeric_grad(&oracle.p[i], FD_EPS, |p| {
            let mut o = oracle.clone();
            o.p[i] = p.to_vec();
            weighted_sum(&o.attention(&x64, n), &w64)
        });
        worst = worst.max(rel_err(&grad_f64(block.tensors()[i]), &numeric, 1e-12));
    }

    // Full block.
    let (y, trace) = block.forward(&x, n, &mut counters);
    worst = worst.max(rel_err(&to_f64(&y), &oracle.forward(&x64, n), 1e-12));
    for t in block.tensors_mut() {
        t.zero_grad();
    }
    let dx = block.backward(&trace, &w);
    let ndx = numeric_grad(&x64, FD_EPS, |x| weighted_sum(&oracle.forward(x, n), &w64));
    worst = worst.max(rel_err(&to_f64(&dx), &ndx, 1e-12));
    for i in 0..12 {
        let numeric = numeric_grad(&oracle.p[i], FD_EPS, |p| {
            let mut o = oracle.clone();
            o.p[i] = p.to_vec();
            weighted_sum(&o.forward(&x64, n), &w64)
        });
        worst = worst.max(rel_err(&grad_f64(block.tensors()[i]), &numeric, 1e-12));
    }
    worst
}

/// Worst op-level relative error for one seed.
pub fn op_suite(seed: u64) -> f64 {
    check_matmul(seed)
        .max(check_softmax(seed))
        .max(check_layer_norm(seed))
        .max(check_gelu(seed))
        .max(check_block(seed))
}

pub fn tiny_model_config(arch: Architecture) -> ModelConfig {
    ModelConfig {
        d: 8,
        heads: 2,
        n_lower: 1,
        k_layers: 1,
        max_question_len: 4,
        max_document_len: 6,
        arch,
    }
}

const VOCAB: usize = 24;
const SAMPLED: usize = 50;

/// Relative error of the logit gradient on 50 sampled parameters of a tiny
/// model, against f32 central differences of the forward pass.
pub fn model_check(arch: Architecture, seed: u64) -> f64 {
    let cfg = tiny_model_config(arch);
    let mut params = ModelParams::seeded(&cfg, VOCAB, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    // Inflate the initialization so gradients are well above f32 noise.
    for t in params.trainable_mut(arch) {
        for v in t.data_mut() {
            *v *= 4.0;
        }
    }
    let q_ids: Vec<u32> = (0..2).map(|_| rng.gen_range(4..VOCAB as u32)).collect();
    let d_len = rng.gen_range(2..=4);
    let d_ids: Vec<u32> = (0..d_len).map(|_| rng.gen_range(4..VOCAB as u32)).collect();
    let q = TokenSequence::from_content_ids(&q_ids, Role::Question, cfg.max_question_len).unwrap();
    let d = TokenSequence::from_content_ids(&d_ids, Role::Document, cfg.max_document_len).unwrap();

    for t in params.trainable_mut(arch) {
        t.zero_grad();
    }
    let trace = params.forward_pair(arch, &q, &d, &mut OpCounters::default()).unwrap();
    params.backward_pair(&trace, 1.0);

    // Sample among parameters whose token rows are actually used, so the
    // check is not dominated by structurally zero entries.
    let sizes: Vec<usize> = params.trainable_mut(arch).iter().map(|t| t.len()).collect();
    let mut picks = Vec::with_capacity(SAMPLED);
    let mut attempts = 0;
    while picks.len() < SAMPLED && attempts < 100_000 {
        attempts += 1;
        let ti = rng.gen_range(0..sizes.len());
        let ei = rng.gen_range(0..sizes[ti]);
        let g = params.trainable_mut(arch)[ti].grad().map_or(0.0, |g| g[ei]);
        if g != 0.0 || rng.gen_bool(0.05) {
            picks.push((ti, ei, g as f64));
        }
    }
    assert_eq!(picks.len(), SAMPLED);

    let eps = 3e-3f32;
    let logit = |p: &ModelParams| p.forward_pair(arch, &q, &d, &mut OpCounters::default()).unwrap().logit as f64;
    let mut analytic = Vec::with_capacity(SAMPLED);
    let mut numeric = Vec::with_capacity(SAMPLED);
    for &(ti, ei, g) in &picks {
        let orig = params.trainable_mut(arch)[ti].data()[ei];
        params.trainable_mut(arch)[ti].data_mut()[ei] = orig + eps;
        let up = logit(&params);
        params.trainable_mut(arch)[ti].data_mut()[ei] = orig - eps;
        let down = logit(&params);
        params.trainable_mut(arch)[ti].data_mut()[ei] = orig;
        analytic.push(g);
        numeric.push((up - down) / (2.0 * eps as f64));
    }
    rel_err(&analytic, &numeric, 1e-6)
}
