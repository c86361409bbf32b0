//! Minimal differentiable compute layer: tensors, a fixed layer vocabulary
//! with hand-written backward passes, Adam and finite-difference checks.

pub mod adam;
mod gemm;
pub mod gauss;
pub mod gradcheck;
pub mod network;
pub mod normalize;
pub mod tensor;

pub use adam::{clip_global_norm, AdamConfig, OptimState};
pub use gauss::{gaussian_sample, gaussian_with_noise};
pub use gradcheck::{grad_check, input_grad_check};
pub use network::{accumulate, build, zero_grads, Activation, Conv1d, Dense, Layer, Network};
pub use normalize::Normalizer;
pub use tensor::Tensor;

/// Smooth L1 (Huber with threshold 1) averaged over elements; returns the loss
/// and its gradient with respect to `pred`.
pub fn smooth_l1(target: &Tensor, pred: &Tensor) -> crate::Result<(f64, Tensor)> {
    let n = target.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = pred.zip_map(target, |p, t| {
        let d = p - t;
        if d.abs() < 1.0 {
            d / n
        } else {
            d.signum() / n
        }
    })?;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = (p - t).abs();
        loss += if d < 1.0 { 0.5 * d * d } else { d - 0.5 };
    }
    Ok((loss / n, grad))
}
