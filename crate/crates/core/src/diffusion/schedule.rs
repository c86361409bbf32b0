use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// β rises linearly from 1e-4 to 2e-2 at 1000 steps, rescaled by 1000/N.
    #[default]
    Linear,
}

/// Variance schedule indexed by step `n` in `1..=N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    /// Posterior mean weight on the clean estimate.
    pub coef_clean: Vec<f64>,
    /// Posterior mean weight on the current noisy latent.
    pub coef_noisy: Vec<f64>,
    pub posterior_var: Vec<f64>,
}

pub fn make_schedule(kind: ScheduleKind, steps: usize) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::Config(format!("{steps} diffusion steps; need at least 2")));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            let scale = 1000.0 / steps as f64;
            let (lo, hi) = (1e-4 * scale, 2e-2 * scale);
            (0..steps)
                .map(|i| (lo + (hi - lo) * i as f64 / (steps - 1) as f64).min(0.999))
                .collect()
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    let mut coef_clean = Vec::with_capacity(steps);
    let mut coef_noisy = Vec::with_capacity(steps);
    let mut posterior_var = Vec::with_capacity(steps);
    for i in 0..steps {
        let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
        let denom = 1.0 - alpha_bars[i];
        coef_clean.push(prev.sqrt() * betas[i] / denom);
        coef_noisy.push(alphas[i].sqrt() * (1.0 - prev) / denom);
        posterior_var.push(betas[i] * (1.0 - prev) / denom);
    }
    Ok(NoiseSchedule {
        kind,
        betas,
        alphas,
        alpha_bars,
        coef_clean,
        coef_noisy,
        posterior_var,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    fn check(&self, n: usize) -> Result<usize> {
        if n == 0 || n > self.steps() {
            return Err(Error::Config(format!("step {n} outside 1..={}", self.steps())));
        }
        Ok(n - 1)
    }

    /// ᾱ at step `n`, with ᾱ at step 0 taken as 1.
    pub fn alpha_bar(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.alpha_bars[n - 1]
        }
    }
}

/// Forward noising with caller-supplied standard normal noise.
pub fn q_sample_with_noise(z0: &Tensor, n: usize, schedule: &NoiseSchedule, noise: &Tensor) -> Result<Tensor> {
    let i = schedule.check(n)?;
    let (a, b) = (schedule.alpha_bars[i].sqrt(), (1.0 - schedule.alpha_bars[i]).sqrt());
    z0.zip_map(noise, |x, e| a * x + b * e)
}

pub fn q_sample<R: Rng + ?Sized>(z0: &Tensor, n: usize, schedule: &NoiseSchedule, rng: &mut R) -> Result<Tensor> {
    schedule.check(n)?;
    let noise = standard_normal(z0.shape(), rng);
    q_sample_with_noise(z0, n, schedule, &noise)
}

pub fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// Posterior mean `coef_clean·ẑ0 + coef_noisy·zn`.
pub fn posterior_mean(zn: &Tensor, z0_hat: &Tensor, n: usize, schedule: &NoiseSchedule) -> Result<Tensor> {
    let i = schedule.check(n)?;
    let (c0, cn) = (schedule.coef_clean[i], schedule.coef_noisy[i]);
    z0_hat.zip_map(zn, |x0, xn| c0 * x0 + cn * xn)
}

/// One reverse step from `n` to `n - 1`; noise is added only for `n > 1`.
pub fn ddpm_step<R: Rng + ?Sized>(zn: &Tensor, z0_hat: &Tensor, n: usize, schedule: &NoiseSchedule, rng: &mut R) -> Result<Tensor> {
    let mean = posterior_mean(zn, z0_hat, n, schedule)?;
    if n == 1 {
        return Ok(mean);
    }
    let sd = schedule.posterior_var[n - 1].sqrt();
    Ok(Tensor::from_fn(mean.shape(), |k| mean.data()[k] + sd * rng.sample::<f64, _>(StandardNormal)))
}
