use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First/second moment accumulators for a fixed, ordered parameter list.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Bias-corrected adaptive-moment update applied in place.
    ///
    /// The whole step is rejected, with nothing mutated, if any gradient is
    /// non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Structure(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::dim(
                    format!("gradient for {name}"),
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != grads.len()
            || self.first.iter().zip(grads).any(|(m, g)| m.shape() != g.shape())
        {
            return Err(Error::Structure("optimizer state does not mirror parameters".into()));
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((_, p), g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gi), (mi, vi)) in it {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
