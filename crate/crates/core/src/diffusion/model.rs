use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{make_schedule, NoiseSchedule, ScheduleKind};
use crate::data::{AudioTrack, BodyPart, AUDIO_RAW_CHANNELS};
use crate::error::{Error, Result};
use crate::math::{build, Activation, Conv1d, Dense, Layer, Network, Normalizer, Tensor};
use crate::rvq::DOWNSAMPLE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub schedule: ScheduleKind,
    /// Code width of one body part; the latent stacks three of these.
    pub code_dim: usize,
    pub audio_dim: usize,
    pub audio_width: usize,
    pub prompt_dim: usize,
    pub step_embed: usize,
    pub width: usize,
    /// Kernel (in latent steps) of the single temporal conv at the trunk input.
    pub context_kernel: usize,
    /// Residual pointwise blocks after the temporal conv.
    pub depth: usize,
}

impl DiffusionConfig {
    pub fn desk() -> Self {
        Self {
            steps: 100,
            schedule: ScheduleKind::Linear,
            code_dim: 32,
            audio_dim: 16,
            audio_width: 32,
            prompt_dim: 32,
            step_embed: 32,
            width: 128,
            context_kernel: 9,
            depth: 2,
        }
    }

    pub fn paper() -> Self {
        Self {
            steps: 1000,
            code_dim: 512,
            audio_dim: 128,
            audio_width: 256,
            prompt_dim: 256,
            step_embed: 128,
            width: 512,
            depth: 8,
            ..Self::desk()
        }
    }

    pub fn latent_channels(&self) -> usize {
        BodyPart::ALL.len() * self.code_dim
    }

    pub fn input_channels(&self) -> usize {
        self.latent_channels() + self.step_embed + self.audio_dim + self.prompt_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Config(format!("{} diffusion steps; need at least 2", self.steps)));
        }
        if self.step_embed == 0 || !self.step_embed.is_multiple_of(2) {
            return Err(Error::Config("step embedding width must be a positive even number".into()));
        }
        if [self.code_dim, self.audio_dim, self.audio_width, self.prompt_dim, self.width].contains(&0) {
            return Err(Error::Config("diffusion widths must be positive".into()));
        }
        if self.context_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("context kernel {} must be odd", self.context_kernel)));
        }
        Ok(())
    }
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Clean-sample estimator shared by training, blending and tests.
pub trait Denoiser: Sync {
    fn latent_channels(&self) -> usize;
    fn audio_dim(&self) -> usize;
    fn prompt_dim(&self) -> usize;
    /// `zn` is `[n, C]`, `audio` is `[n, audio_dim]`, `prompt` has `prompt_dim` entries.
    fn denoise(&self, zn: &Tensor, n: usize, audio: &Tensor, prompt: &Tensor) -> Result<Tensor>;
}

/// Sinusoidal embedding of every step `1..=N`, row `n - 1` for step `n`.
pub fn step_table(steps: usize, width: usize) -> Tensor {
    let half = width / 2;
    let scale = 1000.0 / steps as f64;
    let mut t = Tensor::zeros(&[steps, width]);
    for n in 1..=steps {
        let pos = n as f64 * scale;
        for i in 0..half {
            let freq = 10000f64.powf(-(i as f64) / half as f64);
            t.set(n - 1, i, (pos * freq).sin());
            t.set(n - 1, half + i, (pos * freq).cos());
        }
    }
    t
}

pub fn trunk_network<R: Rng + ?Sized>(config: &DiffusionConfig, rng: &mut R) -> Network {
    let w = config.width;
    let act = Activation::Silu;
    let mut layers = vec![
        Layer::Conv1d(Conv1d::same(config.input_channels(), w, config.context_kernel, 1.0, rng)),
        Layer::Act(act),
    ];
    for _ in 0..config.depth {
        let mut inner = build::mlp(&[w, w, w], act, rng);
        let mut lead = vec![Layer::Act(act)];
        lead.extend(inner.layers().iter().cloned());
        if let Some(Layer::Dense(d)) = lead.last_mut() {
            d.weight = d.weight.scale(0.5);
        }
        inner = Network::new(lead);
        layers.push(Layer::Residual(inner));
    }
    layers.push(Layer::Act(act));
    layers.push(Layer::Dense(Dense::new(w, config.latent_channels(), 1.0, rng)));
    Network::new(layers)
}

/// Two stride-2 convolutions bring frame-rate audio to the latent rate.
pub fn audio_network<R: Rng + ?Sized>(config: &DiffusionConfig, rng: &mut R) -> Network {
    let (w, act) = (config.audio_width, Activation::Silu);
    Network::new(vec![
        Layer::Conv1d(Conv1d::new(AUDIO_RAW_CHANNELS, w, 4, 2, 1, 1.0, rng)),
        Layer::Act(act),
        Layer::Conv1d(Conv1d::new(w, w, 4, 2, 1, 1.0, rng)),
        Layer::Act(act),
        Layer::Conv1d(Conv1d::same(w, config.audio_dim, 3, 1.0, rng)),
    ])
}

/// `[N / 4, audio_dim]` features; all zero without invoking the net when audio is absent.
pub fn encode_audio(audio_net: &Network, audio_dim: usize, track: Option<&AudioTrack>, frames: usize) -> Result<Tensor> {
    if !frames.is_multiple_of(DOWNSAMPLE) {
        return Err(Error::Length(format!("{frames} frames is not a multiple of {DOWNSAMPLE}")));
    }
    match track {
        None => Ok(Tensor::zeros(&[frames / DOWNSAMPLE, audio_dim])),
        Some(t) if t.len() != frames => Err(Error::Length(format!("audio has {} frames, expected {frames}", t.len()))),
        Some(t) => audio_net.infer(&t.frame_features()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub config: DiffusionConfig,
    pub schedule: NoiseSchedule,
    pub trunk: Network,
    pub audio_net: Network,
    /// Maps stacked code sums to the unit-scale space the chain runs in.
    pub latent_norm: Normalizer,
    steps: Tensor,
}

impl DenoiserModel {
    pub fn new<R: Rng + ?Sized>(config: DiffusionConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            schedule: make_schedule(config.schedule, config.steps)?,
            trunk: trunk_network(&config, rng),
            audio_net: audio_network(&config, rng),
            latent_norm: Normalizer::identity(config.latent_channels()),
            steps: step_table(config.steps, config.step_embed),
            config,
        })
    }

    /// Rebuilds a model from stored parts.
    pub fn from_parts(config: DiffusionConfig, trunk: Network, audio_net: Network, latent_norm: Normalizer) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            schedule: make_schedule(config.schedule, config.steps)?,
            steps: step_table(config.steps, config.step_embed),
            trunk,
            audio_net,
            latent_norm,
            config,
        })
    }

    pub fn encode_audio(&self, track: Option<&AudioTrack>, frames: usize) -> Result<Tensor> {
        encode_audio(&self.audio_net, self.config.audio_dim, track, frames)
    }

    pub fn zero_audio(&self, latents: usize) -> Tensor {
        Tensor::zeros(&[latents, self.config.audio_dim])
    }

    pub fn zero_prompt(&self) -> Tensor {
        Tensor::zeros(&[self.config.prompt_dim])
    }

    /// `[Zn | step embedding | A | P]` per latent step.
    pub fn trunk_input(&self, zn: &Tensor, n: usize, audio: &Tensor, prompt: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        if zn.shape().len() != 2 || zn.cols() != c.latent_channels() {
            return Err(Error::dim("noisy latent", format!("[n, {}]", c.latent_channels()), format!("{:?}", zn.shape())));
        }
        let len = zn.rows();
        if audio.shape() != [len, c.audio_dim] {
            return Err(Error::dim("audio features", format!("[{len}, {}]", c.audio_dim), format!("{:?}", audio.shape())));
        }
        if prompt.len() != c.prompt_dim {
            return Err(Error::dim("prompt feature", c.prompt_dim, prompt.len()));
        }
        if n == 0 || n > c.steps {
            return Err(Error::Config(format!("step {n} outside 1..={}", c.steps)));
        }
        let width = c.input_channels();
        let emb = self.steps.row(n - 1);
        let mut out = Vec::with_capacity(len * width);
        for t in 0..len {
            out.extend_from_slice(zn.row(t));
            out.extend_from_slice(emb);
            out.extend_from_slice(audio.row(t));
            out.extend_from_slice(prompt.data());
        }
        Tensor::new(vec![len, width], out)
    }

    /// Column range of the audio features inside the trunk input.
    pub fn audio_columns(&self) -> std::ops::Range<usize> {
        let start = self.config.latent_channels() + self.config.step_embed;
        start..start + self.config.audio_dim
    }
}

impl Denoiser for DenoiserModel {
    fn latent_channels(&self) -> usize {
        self.config.latent_channels()
    }

    fn audio_dim(&self) -> usize {
        self.config.audio_dim
    }

    fn prompt_dim(&self) -> usize {
        self.config.prompt_dim
    }

    fn denoise(&self, zn: &Tensor, n: usize, audio: &Tensor, prompt: &Tensor) -> Result<Tensor> {
        self.trunk.infer(&self.trunk_input(zn, n, audio, prompt)?)
    }
}
