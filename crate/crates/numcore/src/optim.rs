//! AdamW with decoupled weight decay and bias correction.

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Optimizer hyperparameters. Defaults follow the training setup used
/// throughout this project: β = (0.9, 0.95), lr = 1e-4.
#[derive(Clone, Copy, Debug)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter moment state.
#[derive(Clone, Debug)]
pub struct AdamWState<T: Scalar = f32> {
    pub step: u64,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            step: 0,
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        }
    }
}

/// One AdamW update:
///
/// ```text
/// m ← β₁·m + (1−β₁)·g        v ← β₂·v + (1−β₂)·g²
/// m̂ = m/(1−β₁ᵗ)              v̂ = v/(1−β₂ᵗ)
/// θ ← θ − lr·( m̂/(√v̂+ε) + λ·θ )
/// ```
///
/// Non-finite gradients are rejected rather than written into the state.
pub fn adamw_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamWState<T>,
    hp: &AdamWParams,
) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::ShapeMismatch {
            op: "adamw_step",
            lhs: param.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite { op: "adamw_step" });
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(hp.beta1);
    let b2 = T::from_f64(hp.beta2);
    let one_m_b1 = T::from_f64(1.0 - hp.beta1);
    let one_m_b2 = T::from_f64(1.0 - hp.beta2);
    let bc1 = T::from_f64(1.0 / (1.0 - hp.beta1.powi(t)));
    let bc2 = T::from_f64(1.0 / (1.0 - hp.beta2.powi(t)));
    let lr = T::from_f64(hp.lr);
    let eps = T::from_f64(hp.eps);
    let decay = T::from_f64(hp.lr * hp.weight_decay);

    let n = param.len();
    let mut p = param.to_vec();
    let mut m = state.m.to_vec();
    let mut v = state.v.to_vec();
    let g = grad.data();
    for i in 0..n {
        m[i] = b1 * m[i] + one_m_b1 * g[i];
        v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
        let m_hat = m[i] * bc1;
        let v_hat = v[i] * bc2;
        p[i] = p[i] - lr * (m_hat / (v_hat.sqrt() + eps)) - decay * p[i];
    }
    *param = Tensor::from_vec_unchecked(param.shape(), p);
    state.m = Tensor::from_vec_unchecked(state.m.shape(), m);
    state.v = Tensor::from_vec_unchecked(state.v.shape(), v);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_no_decay_is_fixed_point() {
        let mut p = Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut st = AdamWState::new(&[3]);
        let hp = AdamWParams { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut p, &g, &mut st, &hp).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_grad_with_decay_scales_param() {
        let mut p = Tensor::<f64>::from_vec(&[2], vec![2.0, -4.0]).unwrap();
        let g = Tensor::zeros(&[2]);
        let mut st = AdamWState::new(&[2]);
        let hp = AdamWParams { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        adamw_step(&mut p, &g, &mut st, &hp).unwrap();
        // θ ← θ(1 − lr·λ) = θ·0.95
        assert!((p.data()[0] - 2.0 * 0.95).abs() < 1e-15);
        assert!((p.data()[1] - -4.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // g = 1 at step 1: m̂ = v̂ = 1, so Δθ = lr/(1+ε) ≈ lr.
        let mut p = Tensor::<f64>::scalar(3.0);
        let g = Tensor::scalar(1.0);
        let mut st = AdamWState::new(&[1]);
        let hp = AdamWParams { lr: 1e-4, weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut p, &g, &mut st, &hp).unwrap();
        let delta = 3.0 - p.item();
        assert!((delta - 1e-4).abs() < 1e-11, "delta {delta}");
    }

    #[test]
    fn non_finite_grad_rejected() {
        let mut p = Tensor::<f64>::scalar(1.0);
        let bad = Tensor::from_vec_unchecked(&[1], vec![f64::NAN]);
        let mut st = AdamWState::new(&[1]);
        let err = adamw_step(&mut p, &bad, &mut st, &AdamWParams::default());
        assert!(err.is_err());
        assert_eq!(st.step, 0, "state untouched on rejection");
    }
}
