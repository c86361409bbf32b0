use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::blend::combine;
use super::fuse::{part_masks, partwise_fuse};
use super::route::{route_prompt, RoutingRecord};
use crate::align::AlignSpace;
use crate::data::{AudioTrack, BodyPart, MotionClip, PromptTokens, CLIP_FRAMES};
use crate::diffusion::{ddpm_step, decode_latent, q_sample, standard_normal, Denoiser, DenoiserModel};
use crate::error::{Error, Result};
use crate::math::Tensor;
use crate::persist::seed;
use crate::rvq::{RvqStack, DOWNSAMPLE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    pub w_audio: f64,
    pub w_prompt: f64,
    /// Per-part prompt scales; parts not listed use `w_prompt`.
    #[serde(default)]
    pub part_prompt_weights: BTreeMap<BodyPart, f64>,
    pub seed: u64,
    pub window: usize,
    pub seed_latents: usize,
    /// `[1, 2, 1] / 4` temporal filter on the fused estimate.
    #[serde(default)]
    pub smoothing: bool,
}

impl GuidanceSpec {
    pub fn new(w_audio: f64, w_prompt: f64, seed: u64) -> Self {
        Self {
            w_audio,
            w_prompt,
            part_prompt_weights: BTreeMap::new(),
            seed,
            window: CLIP_FRAMES,
            seed_latents: 4,
            smoothing: false,
        }
    }

    pub fn prompt_weight(&self, part: BodyPart) -> f64 {
        self.part_prompt_weights.get(&part).copied().unwrap_or(self.w_prompt)
    }

    /// Frames added by each window after the first.
    pub fn stride(&self) -> usize {
        self.window - self.seed_latents * DOWNSAMPLE
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_audio, self.w_prompt].into_iter().chain(self.part_prompt_weights.values().copied());
        if weights.into_iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("guidance weights must be finite".into()));
        }
        if self.window == 0 || !self.window.is_multiple_of(DOWNSAMPLE) || self.seed_latents * DOWNSAMPLE >= self.window {
            return Err(Error::Config(format!(
                "window {} with {} seed latents is not a valid tiling",
                self.window, self.seed_latents
            )));
        }
        Ok(())
    }

    /// Number of windows covering `total_frames`; errors unless it tiles exactly.
    pub fn windows_for(&self, total_frames: usize) -> Result<usize> {
        self.validate()?;
        if total_frames < self.window || !(total_frames - self.window).is_multiple_of(self.stride()) {
            return Err(Error::Length(format!(
                "{total_frames} frames; generation produces {} + k·{} frames",
                self.window,
                self.stride()
            )));
        }
        Ok(1 + (total_frames - self.window) / self.stride())
    }
}

/// Which conditioning a denoiser call carried.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Unconditional,
    Audio,
    Prompt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiseCall {
    pub window: usize,
    pub step: usize,
    pub part: BodyPart,
    pub branch: Branch,
    pub audio_zero: bool,
    pub prompt_zero: bool,
}

pub type CallHook<'a> = &'a (dyn Fn(DenoiseCall) + Sync);

/// Frozen components used at inference.
pub struct Models<'a> {
    pub denoiser: &'a DenoiserModel,
    pub stacks: &'a [RvqStack; 3],
    pub space: &'a AlignSpace,
}

pub struct GenerationRequest<'a> {
    pub audio: Option<&'a AudioTrack>,
    pub prompt: Option<&'a PromptTokens>,
    pub overrides: BTreeMap<BodyPart, PromptTokens>,
    pub total_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub guidance: GuidanceSpec,
    pub routing: RoutingRecord,
    pub prompt: Option<String>,
    pub has_audio: bool,
    pub total_frames: usize,
    pub windows: usize,
    pub denoiser_calls: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub clip: MotionClip,
    /// Normalized latent of the whole sequence after seam stitching.
    pub latent: Tensor,
    pub manifest: GenerationManifest,
}

/// Per-part blended estimate at one step; branches whose result is already
/// known (zero weight, or a condition that is absent) reuse the unconditional call.
#[allow(clippy::too_many_arguments)]
fn part_estimate(
    model: &DenoiserModel,
    zn: &Tensor,
    n: usize,
    audio: Option<&Tensor>,
    prompt: Option<&Tensor>,
    w_audio: f64,
    w_prompt: f64,
    mut call: impl FnMut(Branch, bool, bool),
) -> Result<(Tensor, u64)> {
    let len = zn.rows();
    let zero_audio = model.zero_audio(len);
    let zero_prompt = model.zero_prompt();
    call(Branch::Unconditional, true, true);
    let uncond = model.denoise(zn, n, &zero_audio, &zero_prompt)?;
    let mut calls = 1;
    let with_audio = match audio {
        Some(a) if w_audio != 0.0 => {
            call(Branch::Audio, false, true);
            calls += 1;
            model.denoise(zn, n, a, &zero_prompt)?
        }
        _ => uncond.clone(),
    };
    let with_prompt = match prompt {
        Some(p) if w_prompt != 0.0 => {
            call(Branch::Prompt, true, false);
            calls += 1;
            model.denoise(zn, n, &zero_audio, p)?
        }
        _ => uncond.clone(),
    };
    Ok((combine(&uncond, &with_audio, &with_prompt, w_audio, w_prompt)?, calls))
}

fn smooth_time(x: &Tensor) -> Tensor {
    let (rows, cols) = (x.rows(), x.cols());
    Tensor::from_fn(&[rows, cols], |k| {
        let (t, c) = (k / cols, k % cols);
        let prev = x.at(t.saturating_sub(1), c);
        let next = x.at((t + 1).min(rows - 1), c);
        0.25 * prev + 0.5 * x.at(t, c) + 0.25 * next
    })
}

fn overwrite_rows(z: &mut Tensor, src: &Tensor) {
    for t in 0..src.rows() {
        z.row_mut(t).copy_from_slice(src.row(t));
    }
}

/// Autoregressive windowed sampling with per-part guidance and masked fusion.
pub fn generate(models: &Models<'_>, request: &GenerationRequest<'_>, spec: &GuidanceSpec, hook: Option<CallHook<'_>>) -> Result<Generation> {
    let model = models.denoiser;
    let windows = spec.windows_for(request.total_frames)?;
    if models.space.dim() != model.config.prompt_dim {
        return Err(Error::Config("alignment space and denoiser disagree on prompt width".into()));
    }
    if let Some(a) = request.audio {
        if a.len() < request.total_frames {
            return Err(Error::Length(format!("audio has {} frames, {} requested", a.len(), request.total_frames)));
        }
    }
    let routing = route_prompt(request.prompt, &request.overrides);
    let prompts: BTreeMap<BodyPart, Tensor> = routing
        .0
        .iter()
        .map(|(&part, tokens)| Ok((part, models.space.encode_text(tokens)?.mu)))
        .collect::<Result<_>>()?;
    let masks = part_masks(model.config.code_dim);
    let latents = spec.window / DOWNSAMPLE;
    let steps = model.config.steps;
    let channels = model.config.latent_channels();

    let mut pieces: Vec<Tensor> = Vec::with_capacity(windows);
    let mut tail: Option<Tensor> = None;
    let mut total_calls = 0u64;
    for w in 0..windows {
        let start = w * spec.stride();
        let audio = match request.audio {
            Some(track) => Some(model.encode_audio(Some(&track.window(start, spec.window)), spec.window)?),
            None => None,
        };
        let mut rng = seed::stream_indexed(spec.seed, "generate", &[w as u64]);
        let mut z = standard_normal(&[latents, channels], &mut rng);
        if let Some(t) = &tail {
            overwrite_rows(&mut z, &q_sample(t, steps, &model.schedule, &mut rng)?);
        }
        for n in (1..=steps).rev() {
            let results: Vec<(BodyPart, Result<(Tensor, u64)>)> = BodyPart::ALL
                .par_iter()
                .map(|&part| {
                    let r = part_estimate(
                        model,
                        &z,
                        n,
                        audio.as_ref(),
                        prompts.get(&part),
                        spec.w_audio,
                        spec.prompt_weight(part),
                        |branch, audio_zero, prompt_zero| {
                            if let Some(h) = hook {
                                h(DenoiseCall {
                                    window: w,
                                    step: n,
                                    part,
                                    branch,
                                    audio_zero,
                                    prompt_zero,
                                })
                            }
                        },
                    );
                    (part, r)
                })
                .collect();
            let mut estimates = BTreeMap::new();
            for (part, r) in results {
                let (e, calls) = r?;
                total_calls += calls;
                estimates.insert(part, e);
            }
            let mut fused = partwise_fuse(&estimates, &masks)?;
            if spec.smoothing {
                fused = smooth_time(&fused);
            }
            z = ddpm_step(&z, &fused, n, &model.schedule, &mut rng)?;
            if let Some(t) = &tail {
                let clamp = if n > 1 { q_sample(t, n - 1, &model.schedule, &mut rng)? } else { t.clone() };
                overwrite_rows(&mut z, &clamp);
            }
        }
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("generated window {w}")));
        }
        tail = Some(z.slice_rows(latents - spec.seed_latents, latents));
        pieces.push(if w == 0 { z } else { z.slice_rows(spec.seed_latents, latents) });
    }
    let latent = Tensor::vcat(&pieces.iter().collect::<Vec<_>>())?;
    let clip = decode_latent(models.stacks, &model.latent_norm, &latent)?;
    Ok(Generation {
        clip,
        latent,
        manifest: GenerationManifest {
            guidance: spec.clone(),
            routing: RoutingRecord { parts: routing.describe() },
            prompt: request.prompt.map(|p| p.text()),
            has_audio: request.audio.is_some(),
            total_frames: request.total_frames,
            windows,
            denoiser_calls: total_calls,
        },
    })
}
