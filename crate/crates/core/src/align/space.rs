use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PromptTokens, CHANNELS, CLIP_FRAMES, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::math::gauss::clamp_logvar;
use crate::math::{build, gaussian_sample, Activation, Network, Normalizer, Tensor};

/// Pooled statistics per motion channel: mean, standard deviation, mean |frame delta|.
pub const MOTION_FEATURES: usize = 3 * CHANNELS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub dim: usize,
    pub text_hidden: usize,
    pub motion_hidden: usize,
    pub decoder_hidden: usize,
    /// Frames reconstructed by the auxiliary decoder.
    pub frames: usize,
    pub lambda_kl: f64,
    pub lambda_e: f64,
    pub lambda_nce: f64,
    pub temperature: f64,
    pub filter_threshold: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl AlignConfig {
    pub fn desk() -> Self {
        Self {
            dim: 32,
            text_hidden: 64,
            motion_hidden: 128,
            decoder_hidden: 128,
            frames: CLIP_FRAMES,
            lambda_kl: 1e-5,
            lambda_e: 1e-5,
            lambda_nce: 0.1,
            temperature: 0.1,
            filter_threshold: 0.8,
            batch: 32,
            epochs: 50,
            lr: 2e-3,
        }
    }

    pub fn paper() -> Self {
        Self {
            dim: 256,
            text_hidden: 512,
            motion_hidden: 512,
            decoder_hidden: 512,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if !(self.filter_threshold > 0.0 && self.filter_threshold <= 1.0) {
            return Err(Error::Config(format!("filter threshold {} outside (0, 1]", self.filter_threshold)));
        }
        if self.dim == 0 || self.batch < 2 || self.frames == 0 {
            return Err(Error::Config("alignment dim, frames must be positive and batch at least 2".into()));
        }
        Ok(())
    }
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Diagonal Gaussian in the shared space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbEmbedding {
    pub mu: Tensor,
    pub logvar: Tensor,
    pub sample: Option<Tensor>,
}

impl ProbEmbedding {
    fn from_head(out: &Tensor, dim: usize) -> Self {
        let mu = Tensor::new(vec![dim], out.data()[..dim].to_vec()).expect("head width");
        let logvar = Tensor::new(vec![dim], out.data()[dim..].iter().map(|&v| clamp_logvar(v)).collect()).expect("head width");
        Self { mu, logvar, sample: None }
    }

    pub fn with_sample<R: Rng + ?Sized>(mut self, rng: &mut R) -> Result<Self> {
        self.sample = Some(gaussian_sample(&self.mu, &self.logvar, rng)?);
        Ok(self)
    }
}

/// Normalized bag of words over the closed vocabulary, `[1, VOCAB_SIZE]`.
pub fn text_features(tokens: &PromptTokens) -> Tensor {
    let mut x = vec![0.0; VOCAB_SIZE];
    for &id in tokens.ids() {
        x[id] += 1.0;
    }
    let n = tokens.ids().len().max(1) as f64;
    x.iter_mut().for_each(|v| *v /= n);
    Tensor::new(vec![1, VOCAB_SIZE], x).expect("vocab width")
}

/// Time-pooled motion statistics, `[1, MOTION_FEATURES]`.
pub fn motion_features(frames: &Tensor) -> Result<Tensor> {
    if frames.shape().len() != 2 || frames.cols() != CHANNELS {
        return Err(Error::dim("motion features", format!("[N, {CHANNELS}]"), format!("{:?}", frames.shape())));
    }
    let n = frames.rows();
    if n < 2 {
        return Err(Error::Length(format!("{n} frames; motion features need at least 2")));
    }
    let mut out = vec![0.0; MOTION_FEATURES];
    for c in 0..CHANNELS {
        let mean = (0..n).map(|t| frames.at(t, c)).sum::<f64>() / n as f64;
        let var = (0..n).map(|t| (frames.at(t, c) - mean).powi(2)).sum::<f64>() / n as f64;
        let speed = (1..n).map(|t| (frames.at(t, c) - frames.at(t - 1, c)).abs()).sum::<f64>() / (n - 1) as f64;
        out[c] = mean;
        out[CHANNELS + c] = var.sqrt();
        out[2 * CHANNELS + c] = speed;
    }
    Tensor::new(vec![1, MOTION_FEATURES], out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignSpace {
    pub config: AlignConfig,
    pub text_encoder: Network,
    pub motion_encoder: Network,
    pub recon_decoder: Network,
    pub motion_norm: Normalizer,
}

impl AlignSpace {
    pub fn new<R: Rng + ?Sized>(config: AlignConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let act = Activation::Tanh;
        let d = config.dim;
        Ok(Self {
            text_encoder: build::mlp(&[VOCAB_SIZE, config.text_hidden, config.text_hidden, 2 * d], act, rng),
            motion_encoder: build::mlp(&[MOTION_FEATURES, config.motion_hidden, config.motion_hidden, 2 * d], act, rng),
            recon_decoder: build::mlp(&[d, config.decoder_hidden, config.frames * CHANNELS], act, rng),
            motion_norm: Normalizer::identity(MOTION_FEATURES),
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn encode_text(&self, tokens: &PromptTokens) -> Result<ProbEmbedding> {
        let out = self.text_encoder.infer(&text_features(tokens))?;
        Ok(ProbEmbedding::from_head(&out, self.dim()))
    }

    pub fn encode_motion(&self, frames: &Tensor) -> Result<ProbEmbedding> {
        let x = self.motion_norm.apply(&motion_features(frames)?);
        let out = self.motion_encoder.infer(&x)?;
        Ok(ProbEmbedding::from_head(&out, self.dim()))
    }

    /// Prompt feature substituted for a missing text annotation: the motion mean.
    pub fn implicit_label(&self, frames: &Tensor) -> Result<Tensor> {
        Ok(self.encode_motion(frames)?.mu)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb).max(1e-12)).clamp(-1.0, 1.0)
}
