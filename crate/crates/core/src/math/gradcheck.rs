//! Central finite-difference verification of analytic gradients.

use super::network::Network;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss` for every
/// coordinate of the parameters exposed by `params_of`.
///
/// `stride` > 1 probes every `stride`-th coordinate of each tensor (always
/// including the first), which keeps large models tractable.
pub fn check_model<M>(
    model: &mut M,
    params_of: impl Fn(&mut M) -> Vec<&mut Tensor>,
    loss: impl Fn(&M) -> Result<f64>,
    analytic: &[Tensor],
    eps: f64,
    stride: usize,
) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let count = params_of(model).len();
    if count != analytic.len() {
        return Err(Error::Structure(format!(
            "{count} parameter tensors but {} analytic gradients",
            analytic.len()
        )));
    }
    let mut worst = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        let len = grad.len();
        let mut idx = 0;
        while idx < len {
            let orig = params_of(model)[pi].data()[idx];
            params_of(model)[pi].data_mut()[idx] = orig + eps;
            let plus = loss(model)?;
            params_of(model)[pi].data_mut()[idx] = orig - eps;
            let minus = loss(model)?;
            params_of(model)[pi].data_mut()[idx] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("loss while probing parameter {pi}[{idx}]")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[idx], numeric));
            idx += stride.max(1);
        }
    }
    Ok(worst)
}

/// Probe loss used by [`grad_check`]: half the mean squared output.
fn probe_loss(net: &Network, input: &Tensor) -> Result<f64> {
    let y = net.infer(input)?;
    Ok(0.5 * y.sq_norm() / y.len() as f64)
}

/// Maximum relative error between backpropagated and finite-difference
/// gradients of `0.5 * mean(net(input)^2)` over all parameters.
pub fn grad_check(net: &Network, input: &Tensor, eps: f64) -> Result<f64> {
    let acts = net.forward(input)?;
    let y = acts.last().expect("output");
    let gy = y.scale(1.0 / y.len() as f64);
    let (grads, _) = net.backward(&acts, &gy)?;
    let mut probe = net.clone();
    let x = input.clone();
    check_model(
        &mut probe,
        |n: &mut Network| n.params_mut(),
        |n: &Network| probe_loss(n, &x),
        &grads,
        eps,
        1,
    )
}

/// Same as [`grad_check`] but for the input gradient.
pub fn input_grad_check(net: &Network, input: &Tensor, eps: f64) -> Result<f64> {
    let acts = net.forward(input)?;
    let y = acts.last().expect("output");
    let gy = y.scale(1.0 / y.len() as f64);
    let (_, gx) = net.backward(&acts, &gy)?;
    let mut x = input.clone();
    check_model(
        &mut x,
        |t: &mut Tensor| vec![t],
        |t: &Tensor| probe_loss(net, t),
        &[gx],
        eps,
        1,
    )
}
