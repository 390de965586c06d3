use super::{kernels, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f32 = 1e-5;

fn check_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::Dimension {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        });
    }
    Ok(())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_matrix("matmul", a)?;
    check_matrix("matmul", b)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    kernels::matmul(a.data(), b.data(), m, k, n, &mut out);
    Tensor::new(vec![m, n], out)
}

/// Accumulates `dA += dOut·Bᵀ` and `dB += Aᵀ·dOut` for `out = A·B`.
pub fn matmul_backward(a: &mut Tensor, b: &mut Tensor, dout: &[f32]) -> Result<()> {
    check_matrix("matmul_backward", a)?;
    check_matrix("matmul_backward", b)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    if b.shape()[0] != k || dout.len() != m * n {
        return Err(Error::Dimension {
            op: "matmul_backward",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let b_vals = b.data().to_vec();
    kernels::matmul_a_bt_acc(dout, &b_vals, m, n, k, a.grad_mut());
    let a_vals = a.data().to_vec();
    kernels::matmul_at_b_acc(&a_vals, dout, m, k, n, b.grad_mut());
    Ok(())
}

/// Numerically stable softmax of one row, in place.
pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.clear_grad();
    let c = out.cols();
    for row in out.data_mut().chunks_exact_mut(c) {
        softmax_in_place(row);
    }
    out
}

/// Given softmax output `y` and upstream `dy` for one row, writes `dx`.
pub fn softmax_backward(y: &[f32], dy: &[f32], dx: &mut [f32]) {
    let dot = kernels::dot(y, dy);
    for ((d, &yi), &dyi) in dx.iter_mut().zip(y).zip(dy) {
        *d = yi * (dyi - dot);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormTrace {
    width: usize,
    normalized: Vec<f32>,
    inv_std: Vec<f32>,
}

pub(crate) fn layer_norm_rows(
    x: &[f32],
    gain: &[f32],
    bias: &[f32],
) -> (Vec<f32>, LayerNormTrace) {
    let width = gain.len();
    let rows = x.len() / width;
    let mut out = vec![0.0; x.len()];
    let mut normalized = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    let n = width as f32;
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().sum::<f32>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(rstd);
        for j in 0..width {
            let xh = (row[j] - mean) * rstd;
            normalized[r * width + j] = xh;
            out[r * width + j] = xh * gain[j] + bias[j];
        }
    }
    (
        out,
        LayerNormTrace {
            width,
            normalized,
            inv_std,
        },
    )
}

/// Layer normalization over the last dimension.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<(Tensor, LayerNormTrace)> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d {
        return Err(Error::Dimension {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    let (out, trace) = layer_norm_rows(x.data(), gain.data(), bias.data());
    Ok((Tensor::new(x.shape().to_vec(), out)?, trace))
}

pub(crate) fn layer_norm_backward_rows(
    trace: &LayerNormTrace,
    gain: &[f32],
    dgain: &mut [f32],
    dbias: &mut [f32],
    dout: &[f32],
) -> Vec<f32> {
    let w = trace.width;
    let n = w as f32;
    let mut dx = vec![0.0; dout.len()];
    let mut dxhat = vec![0.0; w];
    for (r, &rstd) in trace.inv_std.iter().enumerate() {
        let dy = &dout[r * w..(r + 1) * w];
        let xh = &trace.normalized[r * w..(r + 1) * w];
        let mut sum_dxhat = 0.0f32;
        let mut sum_dxhat_xhat = 0.0f32;
        for j in 0..w {
            dgain[j] += dy[j] * xh[j];
            dbias[j] += dy[j];
            dxhat[j] = dy[j] * gain[j];
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xh[j];
        }
        for j in 0..w {
            dx[r * w + j] = rstd / n * (n * dxhat[j] - sum_dxhat - xh[j] * sum_dxhat_xhat);
        }
    }
    dx
}

/// Accumulates gain/bias gradients and returns the input gradient.
pub fn layer_norm_backward(
    trace: &LayerNormTrace,
    gain: &mut Tensor,
    bias: &mut Tensor,
    dout: &[f32],
) -> Vec<f32> {
    let gain_vals = gain.data().to_vec();
    layer_norm_backward_rows(trace, &gain_vals, gain.grad_mut(), bias.grad_mut(), dout)
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_A: f32 = 0.044715;

/// GELU, tanh approximation.
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f32) -> f32 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, v: &[f32]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_times_matrix() {
        let eye = mat(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let m = mat(3, 3, &[1., -2., 3., 4.5, 5., 6., 7., 8., -9.]);
        assert_eq!(matmul(&eye, &m).unwrap().data(), m.data());
    }

    #[test]
    fn small_product() {
        let a = mat(2, 2, &[1., 2., 3., 4.]);
        let b = mat(2, 1, &[0., 1.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = mat(2, 3, &[0.; 6]);
        let b = mat(2, 3, &[0.; 6]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&mat(1, 3, &[0., 0., 0.]));
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
        let s = softmax_rows(&mat(1, 2, &[1000., 0.]));
        assert!((s.data()[0] - 1.0).abs() < 1e-6 && s.data()[1].abs() < 1e-6);
        let s = softmax_rows(&mat(1, 3, &[1., 2., 3.]));
        // e^k / (e + e^2 + e^3) evaluated in f64
        let z: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
        for (k, v) in s.data().iter().enumerate() {
            let want = ((k + 1) as f64).exp() / z;
            assert!((*v as f64 - want).abs() < 1e-4);
        }
        assert!((s.data()[0] - 0.09003).abs() < 1e-4);
        assert!((s.data()[2] - 0.66524).abs() < 1e-4);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = softmax_rows(&mat(2, 4, &[3., -1., 0.5, 9., -20., 4., 4., 0.]));
        for row in s.data().chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let g = Tensor::filled(&[4], 1.0);
        let b = Tensor::zeros(&[4]);
        let (y, _) = layer_norm(&mat(1, 4, &[7., 7., 7., 7.]), &g, &b).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));

        let g = Tensor::filled(&[2], 1.0);
        let b = Tensor::zeros(&[2]);
        let (y, _) = layer_norm(&mat(1, 2, &[1., 3.]), &g, &b).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-2 && (y.data()[1] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn layer_norm_moments() {
        let g = Tensor::filled(&[5], 1.0);
        let b = Tensor::zeros(&[5]);
        let (y, _) = layer_norm(&mat(1, 5, &[0.3, -1.2, 4.0, 2.2, 0.0]), &g, &b).unwrap();
        let mean = y.data().iter().sum::<f32>() / 5.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 5.0;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f32, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-3f64;
            let f = |v: f64| {
                0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh())
            };
            let fd = (f(x as f64 + h) - f(x as f64 - h)) / (2.0 * h);
            assert!((gelu_grad(x) as f64 - fd).abs() < 1e-4, "x={x}");
        }
    }
}
