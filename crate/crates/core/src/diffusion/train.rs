use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::latent::{fit_latent_norm, stack_codes};
use super::model::{DenoiserModel, DiffusionConfig};
use super::schedule::{q_sample_with_noise, standard_normal};
use crate::align::AlignSpace;
use crate::data::{AudioTrack, Clip, ClipKind};
use crate::error::{Error, Result};
use crate::math::{accumulate, clip_global_norm, smooth_l1, zero_grads, AdamConfig, OptimState, Tensor};
use crate::persist::seed;
use crate::rvq::{cosine_lr, RvqStack, DOWNSAMPLE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionTrainConfig {
    /// Probability of zeroing the audio features of a training sample.
    pub eta_audio: f64,
    /// Probability of zeroing the prompt feature of a training sample.
    pub eta_prompt: f64,
    pub window: usize,
    pub seed_latents: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_floor: f64,
    pub grad_clip: f64,
    /// Share of text clips conditioned on the text encoder instead of the implicit label.
    pub text_fraction: f64,
}

impl DiffusionTrainConfig {
    pub fn desk() -> Self {
        Self {
            eta_audio: 0.1,
            eta_prompt: 0.1,
            window: 128,
            seed_latents: 4,
            batch: 32,
            epochs: 60,
            lr: 1e-3,
            lr_floor: 0.1,
            grad_clip: 5.0,
            text_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [("eta_audio", self.eta_audio), ("eta_prompt", self.eta_prompt)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::Config(format!("{name} = {eta} outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.text_fraction) {
            return Err(Error::Config(format!("text fraction {} outside [0, 1]", self.text_fraction)));
        }
        if self.window == 0 || !self.window.is_multiple_of(DOWNSAMPLE) {
            return Err(Error::Config(format!("window {} must be a positive multiple of {DOWNSAMPLE}", self.window)));
        }
        if self.seed_latents >= self.window / DOWNSAMPLE {
            return Err(Error::Config("seed latents must be shorter than the window".into()));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("diffusion batch and epochs must be positive".into()));
        }
        Ok(())
    }
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// One training clip reduced to what the denoiser sees.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSample {
    pub id: usize,
    pub kind: ClipKind,
    /// Normalized stacked code sums.
    pub z0: Tensor,
    pub prompt: Tensor,
    pub audio: Option<AudioTrack>,
    /// True when `prompt` came from the text encoder rather than the motion encoder.
    pub text_prompt: bool,
}

/// Conditions actually fed to the trunk for one training sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConditionRecord {
    pub epoch: usize,
    pub clip: usize,
    pub step: usize,
    pub audio_zero: bool,
    pub prompt_zero: bool,
}

pub type ConditionObserver<'a> = &'a (dyn Fn(ConditionRecord) + Sync);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionTrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    pub seconds: f64,
}

/// Whether a text clip uses its text-encoder feature under the fraction switch.
pub fn uses_text_feature(run_seed: u64, clip: usize, fraction: f64) -> bool {
    if fraction >= 1.0 {
        return true;
    }
    let u: f64 = seed::stream_indexed(run_seed, "diffusion-text", &[clip as u64]).random();
    u < fraction
}

/// Encodes clips into normalized latents and their prompt features.
pub fn prepare_samples(
    clips: &[&Clip],
    stacks: &[RvqStack; 3],
    space: &AlignSpace,
    train: &DiffusionTrainConfig,
    run_seed: u64,
) -> Result<(Vec<DiffusionSample>, crate::math::Normalizer)> {
    train.validate()?;
    if clips.is_empty() {
        return Err(Error::Empty("diffusion training clips".into()));
    }
    if let Some(c) = clips.iter().find(|c| c.motion.len() != train.window) {
        return Err(Error::Length(format!("clip {} has {} frames, window is {}", c.id, c.motion.len(), train.window)));
    }
    let latents: Vec<Tensor> = clips.par_iter().map(|c| stack_codes(stacks, &c.motion)).collect::<Result<_>>()?;
    let norm = fit_latent_norm(&latents, stacks[0].config.code_dim)?;
    let samples = clips
        .par_iter()
        .zip(latents.par_iter())
        .map(|(c, z)| {
            let text_prompt = match (&c.prompt, c.kind()) {
                (Some(_), ClipKind::T2m) => uses_text_feature(run_seed, c.id, train.text_fraction),
                _ => false,
            };
            let prompt = match (&c.prompt, text_prompt) {
                (Some(p), true) => space.encode_text(p)?.mu,
                _ => space.implicit_label(&c.motion.frames)?,
            };
            Ok(DiffusionSample {
                id: c.id,
                kind: c.kind(),
                z0: norm.apply(z),
                prompt,
                audio: c.audio.clone(),
                text_prompt,
            })
        })
        .collect::<Result<_>>()?;
    Ok((samples, norm))
}

struct SampleGrads {
    loss: f64,
    trunk: Vec<Tensor>,
    audio: Option<Vec<Tensor>>,
}

/// Draws for one sample at one epoch: audio drop, prompt drop, step, noise.
fn sample_draws(model: &DenoiserModel, train: &DiffusionTrainConfig, s: &DiffusionSample, rng: &mut impl Rng) -> (bool, bool, usize, Tensor) {
    let drop_audio = rng.random::<f64>() < train.eta_audio;
    let drop_prompt = rng.random::<f64>() < train.eta_prompt;
    let n = rng.random_range(1..=model.config.steps);
    let noise = standard_normal(s.z0.shape(), rng);
    (drop_audio, drop_prompt, n, noise)
}

fn sample_step(
    model: &DenoiserModel,
    s: &DiffusionSample,
    drop_audio: bool,
    drop_prompt: bool,
    n: usize,
    noise: &Tensor,
    want_grads: bool,
) -> Result<SampleGrads> {
    let len = s.z0.rows();
    let audio_acts = match (&s.audio, drop_audio) {
        (Some(track), false) => Some(model.audio_net.forward(&track.frame_features())?),
        _ => None,
    };
    let audio = match &audio_acts {
        Some(acts) => acts.last().expect("non-empty").clone(),
        None => model.zero_audio(len),
    };
    let prompt = if drop_prompt { model.zero_prompt() } else { s.prompt.clone() };
    let zn = q_sample_with_noise(&s.z0, n, &model.schedule, noise)?;
    let input = model.trunk_input(&zn, n, &audio, &prompt)?;
    let acts = model.trunk.forward(&input)?;
    let pred = acts.last().expect("non-empty");
    let (loss, g) = smooth_l1(&s.z0, pred)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("diffusion loss on clip {}", s.id)));
    }
    if !want_grads {
        return Ok(SampleGrads {
            loss,
            trunk: Vec::new(),
            audio: None,
        });
    }
    let (trunk, gin) = model.trunk.backward(&acts, &g)?;
    let audio = match audio_acts {
        Some(acts) => {
            let cols = model.audio_columns();
            Some(model.audio_net.backward(&acts, &gin.slice_cols(cols.start, cols.end))?.0)
        }
        None => None,
    };
    Ok(SampleGrads { loss, trunk, audio })
}

/// Mean loss with every condition present, at per-clip seeded steps and noise.
pub fn held_out_loss(model: &DenoiserModel, samples: &[DiffusionSample], eval_seed: u64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("held-out diffusion samples".into()));
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let mut rng = seed::stream_indexed(eval_seed, "diffusion-eval", &[s.id as u64]);
            let n = rng.random_range(1..=model.config.steps);
            let noise = standard_normal(s.z0.shape(), &mut rng);
            Ok(sample_step(model, s, false, false, n, &noise, false)?.loss)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Joint training of the trunk and the audio network on prepared samples.
pub fn train_on_samples(
    model: &mut DenoiserModel,
    samples: &[DiffusionSample],
    train: &DiffusionTrainConfig,
    run_seed: u64,
    observer: Option<ConditionObserver<'_>>,
) -> Result<DiffusionTrainReport> {
    train.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("diffusion training samples".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.prompt.len() != model.config.prompt_dim) {
        return Err(Error::dim("prompt feature", model.config.prompt_dim, s.prompt.len()));
    }
    let started = Instant::now();
    let mut opt = OptimState::new(AdamConfig::with_lr(train.lr));
    let mut epoch_losses = Vec::with_capacity(train.epochs);
    let mut step = 0u64;
    let total_steps = (train.epochs * samples.len().div_ceil(train.batch)) as f64;
    for epoch in 0..train.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut seed::stream_indexed(run_seed, "diffusion-order", &[epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(train.batch) {
            let frozen = &*model;
            let results: Vec<SampleGrads> = batch
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    let mut rng = seed::stream_indexed(run_seed, "diffusion-sample", &[epoch as u64, s.id as u64]);
                    let (drop_audio, drop_prompt, n, noise) = sample_draws(frozen, train, s, &mut rng);
                    if let Some(obs) = observer {
                        obs(ConditionRecord {
                            epoch,
                            clip: s.id,
                            step: n,
                            audio_zero: drop_audio || s.audio.is_none(),
                            prompt_zero: drop_prompt,
                        });
                    }
                    sample_step(frozen, s, drop_audio, drop_prompt, n, &noise, true)
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Divergence {
                        epoch,
                        step: step as usize,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;

            let mut trunk = zero_grads(&model.trunk);
            let mut audio = zero_grads(&model.audio_net);
            for r in &results {
                accumulate(&mut trunk, &r.trunk)?;
                if let Some(a) = &r.audio {
                    accumulate(&mut audio, a)?;
                }
                loss_sum += r.loss;
            }
            let inv = 1.0 / results.len() as f64;
            let mut grads: Vec<Tensor> = trunk.into_iter().chain(audio).map(|g| g.scale(inv)).collect();
            clip_global_norm(&mut grads, train.grad_clip);
            opt.config.lr = cosine_lr(train.lr, train.lr_floor, step as f64 / total_steps);
            let mut names: Vec<String> = model.trunk.named_params().into_iter().map(|(n, _)| format!("trunk.{n}")).collect();
            names.extend(model.audio_net.named_params().into_iter().map(|(n, _)| format!("audio.{n}")));
            let mut tensors = model.trunk.params_mut();
            tensors.extend(model.audio_net.params_mut());
            let mut params: Vec<(String, &mut Tensor)> = names.into_iter().zip(tensors).collect();
            opt.step(&mut params, &grads)?;
            step += 1;
        }
        let mean = loss_sum / samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: step as usize,
                loss: mean,
            });
        }
        epoch_losses.push(mean);
    }
    Ok(DiffusionTrainReport {
        epoch_losses,
        steps: step,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Builds a model for the given codecs and space, fits the latent scale and trains it.
pub fn train_diffusion(
    clips: &[&Clip],
    stacks: &[RvqStack; 3],
    space: &AlignSpace,
    config: &DiffusionConfig,
    train: &DiffusionTrainConfig,
    run_seed: u64,
    observer: Option<ConditionObserver<'_>>,
) -> Result<(DenoiserModel, DiffusionTrainReport)> {
    if config.code_dim != stacks[0].config.code_dim {
        return Err(Error::Config(format!(
            "diffusion code width {} differs from the codecs' {}",
            config.code_dim, stacks[0].config.code_dim
        )));
    }
    if config.prompt_dim != space.dim() {
        return Err(Error::Config(format!(
            "prompt width {} differs from the alignment space's {}",
            config.prompt_dim,
            space.dim()
        )));
    }
    let (samples, norm) = prepare_samples(clips, stacks, space, train, run_seed)?;
    let mut model = DenoiserModel::new(config.clone(), &mut seed::stream(run_seed, "diffusion-init"))?;
    model.latent_norm = norm;
    let report = train_on_samples(&mut model, &samples, train, run_seed, observer)?;
    Ok((model, report))
}
