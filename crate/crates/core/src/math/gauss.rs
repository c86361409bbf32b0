use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 20.0;

pub fn clamp_logvar(v: f64) -> f64 {
    v.clamp(LOGVAR_MIN, LOGVAR_MAX)
}

/// Reparameterized draw `mu + exp(logvar / 2) * eps`, with `logvar` clamped.
pub fn gaussian_sample<R: Rng + ?Sized>(mu: &Tensor, logvar: &Tensor, rng: &mut R) -> Result<Tensor> {
    let eps = Tensor::from_fn(mu.shape(), |_| rng.sample::<f64, _>(StandardNormal));
    gaussian_with_noise(mu, logvar, &eps)
}

/// Deterministic form of [`gaussian_sample`] with explicit standard-normal noise.
pub fn gaussian_with_noise(mu: &Tensor, logvar: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if !mu.same_shape(logvar) || !mu.same_shape(eps) {
        return Err(Error::dim(
            "gaussian_sample",
            format!("{:?}", mu.shape()),
            format!("{:?} / {:?}", logvar.shape(), eps.shape()),
        ));
    }
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(eps.data())
        .map(|((&m, &lv), &e)| m + (0.5 * clamp_logvar(lv)).exp() * e)
        .collect();
    Tensor::new(mu.shape().to_vec(), data)
}
