//! Relevance head and loss: `p = σ(W₂·tanh(W₁·[o_cls; o_cls_doc] + b₁) + b₂)`
//! trained with binary cross-entropy.

use rand::Rng;

use crate::error::{Error, Result};
use crate::interaction::PairOutput;
use crate::tensor::{kernels, Tensor, INIT_STD};

/// Probabilities are kept inside `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f32 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    /// `2d×h`
    pub hidden: Tensor,
    pub hidden_bias: Tensor,
    /// `h×1`
    pub output: Tensor,
    pub output_bias: Tensor,
}

pub struct ClassifierTrace {
    input: Vec<f32>,
    activation: Vec<f32>,
}

impl ClassifierParams {
    pub fn new<R: Rng + ?Sized>(width: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            hidden: Tensor::randn(&[2 * width, hidden], INIT_STD, rng),
            hidden_bias: Tensor::zeros(&[hidden]),
            output: Tensor::randn(&[hidden, 1], INIT_STD, rng),
            output_bias: Tensor::zeros(&[1]),
        }
    }

    pub fn input_width(&self) -> usize {
        self.hidden.rows()
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden.cols()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.hidden, &self.hidden_bias, &self.output, &self.output_bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.hidden,
            &mut self.hidden_bias,
            &mut self.output,
            &mut self.output_bias,
        ]
    }

    /// Returns the logit.
    pub fn forward_traced(&self, pair: &PairOutput) -> Result<(f32, ClassifierTrace)> {
        let input = pair.concat();
        if input.len() != self.input_width() {
            return Err(Error::Dimension {
                op: "classify",
                left: vec![input.len()],
                right: self.hidden.shape().to_vec(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("classifier input is not finite"));
        }
        let h = self.hidden_width();
        let mut activation = self.hidden_bias.data().to_vec();
        kernels::matmul_acc(&input, self.hidden.data(), 1, input.len(), h, &mut activation);
        for a in &mut activation {
            *a = a.tanh();
        }
        let logit = kernels::dot(&activation, self.output.data()) + self.output_bias.data()[0];
        Ok((logit, ClassifierTrace { input, activation }))
    }

    /// Backpropagates `d_logit`; returns gradients for `(o_cls, o_cls_doc)`.
    pub fn backward(&mut self, trace: &ClassifierTrace, d_logit: f32) -> (Vec<f32>, Vec<f32>) {
        let h = self.hidden_width();
        let n = trace.input.len();
        self.output_bias.grad_mut()[0] += d_logit;
        let d_act: Vec<f32> = {
            let (w2, g2) = self.output.data_and_grad_mut();
            trace
                .activation
                .iter()
                .zip(g2.iter_mut())
                .zip(w2.iter())
                .map(|((&a, g), &w)| {
                    *g += d_logit * a;
                    d_logit * w * (1.0 - a * a)
                })
                .collect()
        };
        kernels::add_assign(self.hidden_bias.grad_mut(), &d_act);
        kernels::matmul_at_b_acc(&trace.input, &d_act, 1, n, h, self.hidden.grad_mut());
        let mut d_in = vec![0.0; n];
        kernels::matmul_a_bt_acc(&d_act, self.hidden.data(), 1, h, n, &mut d_in);
        let d_doc = d_in.split_off(n / 2);
        (d_in, d_doc)
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid clamped into the open unit interval.
pub fn probability(logit: f32) -> f32 {
    sigmoid(logit).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub fn classify(pair: &PairOutput, params: &ClassifierParams) -> Result<f32> {
    params.forward_traced(pair).map(|(logit, _)| probability(logit))
}

/// `-(y·ln p + (1-y)·ln(1-p))` with `p` clamped away from 0 and 1.
pub fn bce_loss(p: f32, y: u8) -> Result<f32> {
    if y > 1 {
        return Err(Error::invalid(format!("label {y} is not 0 or 1")));
    }
    if !p.is_finite() {
        return Err(Error::NonFinite(format!("probability {p}")));
    }
    let p = (p as f64).clamp(PROB_CLAMP as f64, 1.0 - PROB_CLAMP as f64);
    let loss = if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    Ok(loss as f32)
}

/// Derivative of [`bce_loss`] of `σ(logit)` with respect to the logit.
pub fn bce_grad_logit(logit: f32, y: u8) -> f32 {
    sigmoid(logit) - y as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(width: usize, seed: u64) -> PairOutput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PairOutput {
            o_cls: Tensor::randn(&[width], 1.0, &mut rng).into_data(),
            o_cls_doc: Tensor::randn(&[width], 1.0, &mut rng).into_data(),
        }
    }

    #[test]
    fn zero_weights_give_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ClassifierParams::new(8, 8, &mut rng);
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        assert_eq!(classify(&pair(8, 1), &p).unwrap(), 0.5);
    }

    #[test]
    fn saturated_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ClassifierParams::new(8, 8, &mut rng);
        p.output.data_mut().fill(0.0);
        p.output_bias.data_mut()[0] = 20.0;
        let prob = classify(&pair(8, 1), &p).unwrap();
        assert!(prob > 0.999999 && prob < 1.0);
    }

    #[test]
    fn matches_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ClassifierParams::new(8, 8, &mut rng);
        for t in p.tensors_mut() {
            let shape = t.shape().to_vec();
            *t = Tensor::randn(&shape, 0.3, &mut rng);
        }
        let x = pair(8, 4);
        let input = x.concat();
        let mut z = p.output_bias.data()[0] as f64;
        for j in 0..8 {
            let mut a = p.hidden_bias.data()[j] as f64;
            for (i, &xi) in input.iter().enumerate() {
                a += xi as f64 * p.hidden.data()[i * 8 + j] as f64;
            }
            z += a.tanh() * p.output.data()[j] as f64;
        }
        let want = 1.0 / (1.0 + (-z).exp());
        assert!((classify(&x, &p).unwrap() as f64 - want).abs() < 1e-6);
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ClassifierParams::new(2, 2, &mut rng);
        let x = PairOutput {
            o_cls: vec![f32::NAN, 0.0],
            o_cls_doc: vec![0.0, 0.0],
        };
        assert!(matches!(classify(&x, &p), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn loss_values() {
        for y in [0, 1] {
            assert!((bce_loss(0.5, y).unwrap() - std::f32::consts::LN_2).abs() < 1e-6);
        }
        let near = bce_loss(1.0 - 1e-7, 1).unwrap();
        assert!(near >= 0.0 && near < 2e-7, "{near}");
        assert!(bce_loss(1.0, 0).unwrap().is_finite());
        assert!(matches!(bce_loss(0.3, 2), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn logit_gradient_matches_difference() {
        for &(z, y) in &[(0.3f32, 1u8), (-1.2, 0), (2.0, 0), (-0.4, 1)] {
            let h = 1e-3f64;
            let f = |v: f64| {
                let p = 1.0 / (1.0 + (-v).exp());
                if y == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            };
            let fd = (f(z as f64 + h) - f(z as f64 - h)) / (2.0 * h);
            let an = bce_grad_logit(z, y) as f64;
            assert!(((an - fd) / fd.abs()).abs() < 1e-4, "z={z} y={y}");
        }
    }
}
