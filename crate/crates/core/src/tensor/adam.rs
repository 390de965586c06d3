use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 4e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators, one pair per parameter tensor in
/// the order the parameters are presented to [`adam_step`].
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over every tensor in `params`, reading the
/// gradients stored on the tensors. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    for (i, p) in params.iter().enumerate() {
        if let Some(g) = p.grad() {
            if let Some((j, v)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {i} (shape {:?}) at element {j} is {v}; step {} aborted",
                    p.shape(),
                    state.step + 1
                )));
            }
        }
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.second = state.first.clone();
    } else if state.first.len() != params.len()
        || state.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
    {
        return Err(Error::invalid("optimizer state does not match parameter layout"));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let (values, grad) = p.data_and_grad_mut();
        for i in 0..values.len() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        p.grad_mut();
        let before = p.data().to_vec();
        let mut st = AdamState::new();
        adam_step(&mut [&mut p], &mut st, &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let mut p = Tensor::new(vec![1], vec![1.0]).unwrap();
        p.grad_mut()[0] = 1.0;
        let mut st = AdamState::new();
        adam_step(&mut [&mut p], &mut st, &AdamConfig::with_lr(4e-5)).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let want = 1.0f64 - 4e-5 / (1.0 + 1e-8);
        assert!((p.data()[0] as f64 - want).abs() < 1e-7);
    }

    #[test]
    fn quadratic_loss_decreases() {
        // f(x) = (x - 3)^2, simulated alongside in f64.
        let mut p = Tensor::new(vec![1], vec![0.0]).unwrap();
        let mut st = AdamState::new();
        let cfg = AdamConfig::with_lr(0.1);
        let loss = |x: f32| (x as f64 - 3.0).powi(2);
        let mut prev = loss(p.data()[0]);
        for _ in 0..2 {
            let x = p.data()[0];
            p.grad_mut()[0] = 2.0 * (x - 3.0);
            adam_step(&mut [&mut p], &mut st, &cfg).unwrap();
            let now = loss(p.data()[0]);
            assert!(now < prev);
            prev = now;
        }
        assert_eq!(st.step(), 2);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut b = Tensor::new(vec![1], vec![3.0]).unwrap();
        a.grad_mut()[0] = 0.5;
        b.grad_mut()[0] = f32::NAN;
        let mut st = AdamState::new();
        let err = adam_step(&mut [&mut a, &mut b], &mut st, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(a.data(), &[1.0, 2.0]);
        assert_eq!(st.step(), 0);
    }
}
