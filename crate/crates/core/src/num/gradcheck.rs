//! Finite-difference gradient oracle (test support).
//!
//! Central differences with perturbation 1e-5 at 64-bit precision; analytic
//! gradients are compared against `(f(x+h) - f(x-h)) / 2h` coordinate-wise.

use crate::num::tensor::Tensor;

pub const FD_EPS: f64 = 1e-5;

/// Worst relative error between the analytic gradient of `inputs` and the
/// central finite difference of `f`. `f` must rebuild its computation from
/// scratch on every call.
pub fn max_rel_error<F>(inputs: &[Tensor<f64>], analytic: &[Vec<f64>], f: F) -> f64
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.len(), inputs[ti].numel(), "gradient length mismatch for input {ti}");
        for j in 0..grad.len() {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + FD_EPS;
            let up = f(&work);
            work[ti].data_mut()[j] = orig - FD_EPS;
            let down = f(&work);
            work[ti].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * FD_EPS);
            let a = grad[j];
            let denom = a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max((a - fd).abs() / denom);
        }
    }
    worst
}
