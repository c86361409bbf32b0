use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::math::Tensor;

/// `u + w_a·(a − u) + w_p·(p − u)`, evaluated as `(1 − w_a − w_p)·u + w_a·a + w_p·p`
/// so zero and unit weights reproduce their branch bit for bit.
pub fn combine(uncond: &Tensor, audio: &Tensor, prompt: &Tensor, w_audio: f64, w_prompt: f64) -> Result<Tensor> {
    if !w_audio.is_finite() || !w_prompt.is_finite() {
        return Err(Error::Config(format!("guidance weights must be finite: {w_audio}, {w_prompt}")));
    }
    if !uncond.same_shape(audio) || !uncond.same_shape(prompt) {
        return Err(Error::dim("blended estimates", format!("{:?}", uncond.shape()), format!("{:?} / {:?}", audio.shape(), prompt.shape())));
    }
    let w_u = 1.0 - w_audio - w_prompt;
    let (u, a, p) = (uncond.data(), audio.data(), prompt.data());
    Ok(Tensor::from_fn(uncond.shape(), |k| w_u * u[k] + w_audio * a[k] + w_prompt * p[k]))
}

/// Three denoiser calls: unconditional, audio only, prompt only.
pub fn blend_conditions<D: Denoiser + ?Sized>(
    model: &D,
    zn: &Tensor,
    n: usize,
    audio: &Tensor,
    prompt: &Tensor,
    w_audio: f64,
    w_prompt: f64,
) -> Result<Tensor> {
    let zero_audio = Tensor::zeros(audio.shape());
    let zero_prompt = Tensor::zeros(prompt.shape());
    let uncond = model.denoise(zn, n, &zero_audio, &zero_prompt)?;
    let with_audio = model.denoise(zn, n, audio, &zero_prompt)?;
    let with_prompt = model.denoise(zn, n, &zero_audio, prompt)?;
    combine(&uncond, &with_audio, &with_prompt, w_audio, w_prompt)
}
