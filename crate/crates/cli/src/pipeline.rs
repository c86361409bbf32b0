//! Training stages and evaluation protocols shared by the commands and the
//! acceptance suite.

use std::collections::BTreeMap;

use cospeech_core::align::{cosine, train_align, AlignSpace, AlignTrainReport};
use cospeech_core::compose::{generate, GenerationRequest, GuidanceSpec, Models};
use cospeech_core::data::{walk_template, BodyPart, Clip, Corpus, PromptTokens, Template, TextConfig, CLIP_FRAMES};
use cospeech_core::diffusion::{train_diffusion, DenoiserModel, DiffusionTrainReport};
use cospeech_core::eval::{beat_consistency, max_lag_xcorr};
use cospeech_core::math::Tensor;
use cospeech_core::persist::RunConfig;
use cospeech_core::rvq::{train_rvq, RvqStack, RvqTrainReport};
use cospeech_core::{Error, Result};

/// Largest shift searched when matching generated walking against the template.
pub const WALK_MAX_LAG: usize = 30;
/// Guidance scales of the audio-plus-walk synergy run.
pub const SYNERGY_AUDIO_WEIGHT: f64 = 2.0;
pub const SYNERGY_PROMPT_WEIGHT: f64 = 2.0;

pub struct Trained {
    pub stacks: [RvqStack; 3],
    pub space: AlignSpace,
    pub model: DenoiserModel,
}

impl Trained {
    pub fn models(&self) -> Models<'_> {
        Models {
            denoiser: &self.model,
            stacks: &self.stacks,
            space: &self.space,
        }
    }
}

pub fn train_motions(corpus: &Corpus) -> Vec<Tensor> {
    corpus.train_clips().map(|c| c.motion.frames.clone()).collect()
}

pub fn test_motions(corpus: &Corpus) -> Vec<Tensor> {
    corpus.test_clips().map(|c| c.motion.frames.clone()).collect()
}

pub fn fit_codecs(corpus: &Corpus, cfg: &RunConfig) -> Result<([RvqStack; 3], [RvqTrainReport; 3])> {
    train_rvq(&train_motions(corpus), &cfg.rvq, &cfg.rvq_train, cfg.seed)
}

pub fn fit_space(corpus: &Corpus, cfg: &RunConfig) -> Result<(AlignSpace, AlignTrainReport)> {
    let pairs: Vec<(PromptTokens, Tensor)> = corpus
        .train_clips()
        .filter_map(|c| c.prompt.clone().map(|p| (p, c.motion.frames.clone())))
        .collect();
    train_align(&pairs, &cfg.align, cfg.seed)
}

pub fn fit_denoiser(
    corpus: &Corpus,
    stacks: &[RvqStack; 3],
    space: &AlignSpace,
    cfg: &RunConfig,
) -> Result<(DenoiserModel, DiffusionTrainReport)> {
    let clips: Vec<&Clip> = corpus.train_clips().collect();
    train_diffusion(&clips, stacks, space, &cfg.diffusion, &cfg.diffusion_train, cfg.seed, None)
}

/// Speech test clips, falling back to training clips if the split has none.
pub fn speech_clips(corpus: &Corpus) -> Result<Vec<&Clip>> {
    let test: Vec<&Clip> = corpus.test_clips().filter(|c| c.audio.is_some()).collect();
    let clips = if test.is_empty() {
        corpus.clips.iter().filter(|c| c.audio.is_some()).collect()
    } else {
        test
    };
    if clips.is_empty() {
        return Err(Error::Empty("no speech clips to drive generation".into()));
    }
    Ok(clips)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynergyTrial {
    pub seed: u64,
    pub clip: usize,
    /// Lower-body match against the walk template with audio and prompt.
    pub walk_xcorr: f64,
    pub bc_combined: f64,
    /// Same prompt and seed, audio guidance off.
    pub bc_prompt_only: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynergyReport {
    pub trials: Vec<SynergyTrial>,
}

impl SynergyReport {
    fn mean(&self, f: impl Fn(&SynergyTrial) -> f64) -> f64 {
        self.trials.iter().map(f).sum::<f64>() / self.trials.len().max(1) as f64
    }

    pub fn walk_xcorr(&self) -> f64 {
        self.mean(|t| t.walk_xcorr)
    }

    pub fn bc_combined(&self) -> f64 {
        self.mean(|t| t.bc_combined)
    }

    pub fn bc_prompt_only(&self) -> f64 {
        self.mean(|t| t.bc_prompt_only)
    }

    pub fn bc_ratio(&self) -> f64 {
        self.bc_combined() / self.bc_prompt_only()
    }
}

/// Speech audio plus the prompt "walk" (routed to the lower body), against the
/// same prompt without audio guidance.
pub fn synergy(
    trained: &Trained,
    clips: &[&Clip],
    text: &TextConfig,
    w_audio: f64,
    w_prompt: f64,
    seeds: &[u64],
) -> Result<SynergyReport> {
    let models = trained.models();
    let walk = PromptTokens::from_templates(&[Template::Walk]);
    let template = walk_template(CLIP_FRAMES, text);
    let mut trials = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let clip = clips[i % clips.len()];
        let audio = clip.audio.as_ref().ok_or_else(|| Error::Empty(format!("clip {} has no audio", clip.id)))?;
        let request = |with_audio: bool| GenerationRequest {
            audio: with_audio.then_some(audio),
            prompt: Some(&walk),
            overrides: BTreeMap::new(),
            total_frames: CLIP_FRAMES,
        };
        let spec = GuidanceSpec::new(w_audio, w_prompt, seed);
        let combined = generate(&models, &request(true), &spec, None)?;
        let prompt_only = generate(&models, &request(false), &GuidanceSpec { w_audio: 0.0, ..spec }, None)?;
        trials.push(SynergyTrial {
            seed,
            clip: clip.id,
            walk_xcorr: max_lag_xcorr(&combined.clip.part(BodyPart::Lower), &template, WALK_MAX_LAG)?,
            bc_combined: beat_consistency(&combined.clip.part(BodyPart::Upper), &audio.beat_times)?,
            bc_prompt_only: beat_consistency(&prompt_only.clip.part(BodyPart::Upper), &audio.beat_times)?,
        });
    }
    Ok(SynergyReport { trials })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceTrial {
    pub seed: u64,
    pub template: Template,
    /// Cosine with the prompt embedding, one entry per requested weight.
    pub cosines: Vec<f64>,
}

/// Prompt-only generation at each prompt weight; single-template prompts
/// cycle through the vocabulary.
pub fn guidance_sweep(trained: &Trained, weights: &[f64], seeds: &[u64]) -> Result<Vec<GuidanceTrial>> {
    let models = trained.models();
    seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| {
            let template = Template::ALL[i % Template::ALL.len()];
            let prompt = PromptTokens::from_templates(&[template]);
            let target = trained.space.encode_text(&prompt)?.mu;
            let request = GenerationRequest {
                audio: None,
                prompt: Some(&prompt),
                overrides: BTreeMap::new(),
                total_frames: CLIP_FRAMES,
            };
            let cosines = weights
                .iter()
                .map(|&w| {
                    let g = generate(&models, &request, &GuidanceSpec::new(0.0, w, seed), None)?;
                    Ok(cosine(trained.space.encode_motion(&g.clip.frames)?.mu.data(), target.data()))
                })
                .collect::<Result<_>>()?;
            Ok(GuidanceTrial { seed, template, cosines })
        })
        .collect()
}

/// One-sided sign test: probability of at least `wins` successes in `n` fair trials.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            binom = binom * (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            total += binom;
        }
    }
    total / 2f64.powi(n as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_tail() {
        assert!((sign_test_p(0, 5) - 1.0).abs() < 1e-12);
        assert!((sign_test_p(5, 5) - 1.0 / 32.0).abs() < 1e-12);
        assert!((sign_test_p(15, 20) - 0.020694).abs() < 1e-5);
        assert!(sign_test_p(14, 20) > 0.05);
    }
}
