//! Central finite differences for gradient verification.
//!
//! Used from `#[cfg(test)]` code across the workspace: perturb each input
//! element by ±h, re-run the forward function, and compare the quotient to
//! the analytic gradient. Runs in `f64`, independent of the backward pass it
//! checks.

use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function of several tensors.
/// `f` is re-evaluated 2·len times per input; keep inputs small.
pub fn finite_diff_grads<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Vec<Tensor<f64>>
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for (which, input) in inputs.iter().enumerate() {
        let mut g = vec![0.0; input.len()];
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            let mut data = input.to_vec();
            data[i] += h;
            plus[which] = Tensor::from_vec_unchecked(input.shape(), data);

            let mut minus = inputs.to_vec();
            let mut data = input.to_vec();
            data[i] -= h;
            minus[which] = Tensor::from_vec_unchecked(input.shape(), data);

            g[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        grads.push(Tensor::from_vec_unchecked(input.shape(), g));
    }
    grads
}

/// Largest relative discrepancy between analytic and numeric gradients.
/// The denominator is floored at `1e-3` so near-zero entries are compared
/// on an absolute scale instead of blowing up the ratio.
pub fn max_rel_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0_f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data().iter()) {
        let denom = a.abs().max(n.abs()).max(1e-3);
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}
