use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codebook::Codebook;
use super::quantize::{quantize_residual, LatentSeq, QuantizeResult};
use crate::data::BodyPart;
use crate::error::{Error, Result};
use crate::math::{build, Activation, Conv1d, Layer, Network, Normalizer, Tensor};

/// Temporal reduction between motion frames and latent steps.
pub const DOWNSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvqConfig {
    pub layers: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
    pub beta: f64,
    pub dropout: f64,
    pub downsample: usize,
    pub ema_decay: f64,
    pub reset_threshold: f64,
    /// Hidden channel width of the convolutional encoder and decoder.
    pub width: usize,
}

impl RvqConfig {
    pub fn desk() -> Self {
        Self {
            layers: 4,
            codebook_size: 64,
            code_dim: 32,
            beta: 0.25,
            dropout: 0.2,
            downsample: DOWNSAMPLE,
            ema_decay: 0.99,
            reset_threshold: 1.0,
            width: 64,
        }
    }

    pub fn paper() -> Self {
        Self {
            layers: 6,
            codebook_size: 512,
            code_dim: 512,
            width: 512,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.codebook_size == 0 || self.code_dim == 0 || self.width == 0 {
            return Err(Error::Config("rvq layers, codebook size, code dim and width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("quantization dropout {} outside [0, 1)", self.dropout)));
        }
        if self.downsample != DOWNSAMPLE {
            return Err(Error::Config(format!("downsample must be {DOWNSAMPLE}")));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) || self.beta < 0.0 {
            return Err(Error::Config("ema decay must lie in [0, 1] and beta be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for RvqConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Encoder: two stride-2 stages with residual blocks, `[N, C] -> [N/4, d]`.
pub fn encoder_network<R: Rng + ?Sized>(channels: usize, width: usize, code_dim: usize, rng: &mut R) -> Network {
    let act = Activation::Silu;
    Network::new(vec![
        Layer::Conv1d(Conv1d::same(channels, width, 3, 1.0, rng)),
        Layer::Act(act),
        Layer::Conv1d(Conv1d::new(width, width, 4, 2, 1, 1.0, rng)),
        build::res_block(width, 3, act, rng),
        Layer::Conv1d(Conv1d::new(width, width, 4, 2, 1, 1.0, rng)),
        build::res_block(width, 3, act, rng),
        Layer::Act(act),
        Layer::Conv1d(Conv1d::same(width, code_dim, 3, 1.0, rng)),
    ])
}

/// Decoder mirroring the encoder with nearest-neighbour upsampling.
pub fn decoder_network<R: Rng + ?Sized>(code_dim: usize, width: usize, channels: usize, rng: &mut R) -> Network {
    let act = Activation::Silu;
    Network::new(vec![
        Layer::Conv1d(Conv1d::same(code_dim, width, 3, 1.0, rng)),
        build::res_block(width, 3, act, rng),
        Layer::Upsample(2),
        Layer::Conv1d(Conv1d::same(width, width, 3, 1.0, rng)),
        build::res_block(width, 3, act, rng),
        Layer::Upsample(2),
        Layer::Conv1d(Conv1d::same(width, width, 3, 1.0, rng)),
        Layer::Act(act),
        Layer::Conv1d(Conv1d::same(width, channels, 3, 1.0, rng)),
    ])
}

/// Codec for one body part.
#[derive(Clone, Debug, PartialEq)]
pub struct RvqStack {
    pub part: BodyPart,
    pub config: RvqConfig,
    pub normalizer: Normalizer,
    pub encoder: Network,
    pub decoder: Network,
    pub codebooks: Vec<Codebook>,
}

impl RvqStack {
    /// Freshly initialized stack. Codebooks start as small Gaussian noise and
    /// are normally re-seeded from encoder outputs before training.
    pub fn new<R: Rng + ?Sized>(part: BodyPart, config: RvqConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = part.width();
        let encoder = encoder_network(c, config.width, config.code_dim, rng);
        let decoder = decoder_network(config.code_dim, config.width, c, rng);
        let codebooks = (0..config.layers)
            .map(|_| Codebook::new(Tensor::randn(&[config.codebook_size, config.code_dim], 0.1, rng), config.ema_decay))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            part,
            normalizer: Normalizer::identity(c),
            config,
            encoder,
            decoder,
            codebooks,
        })
    }

    pub fn channels(&self) -> usize {
        self.part.width()
    }

    fn check_channels(&self, motion_part: &Tensor) -> Result<()> {
        if motion_part.shape().len() != 2 || motion_part.cols() != self.channels() {
            return Err(Error::dim(
                format!("{} motion", self.part),
                format!("[N, {}]", self.channels()),
                format!("{:?}", motion_part.shape()),
            ));
        }
        if motion_part.rows() == 0 {
            return Err(Error::Empty(format!("{} motion", self.part)));
        }
        Ok(())
    }

    /// Encodes a clip whose length is a multiple of the downsample factor.
    pub fn encode(&self, motion_part: &Tensor) -> Result<LatentSeq> {
        self.check_channels(motion_part)?;
        if !motion_part.rows().is_multiple_of(DOWNSAMPLE) {
            return Err(Error::Length(format!(
                "{} frames is not a multiple of {DOWNSAMPLE}; use encode_padded",
                motion_part.rows()
            )));
        }
        let z = self.encoder.infer(&self.normalizer.apply(motion_part))?;
        Ok(LatentSeq::raw(z, 0))
    }

    /// Repeats the last frame up to a multiple of the downsample factor, then encodes.
    pub fn encode_padded(&self, motion_part: &Tensor) -> Result<LatentSeq> {
        self.check_channels(motion_part)?;
        let (padded, pad) = pad_to_multiple(motion_part);
        let mut z = self.encode(&padded)?;
        z.pad = pad;
        Ok(z)
    }

    pub fn quantize(&self, z: &LatentSeq) -> Result<QuantizeResult> {
        quantize_residual::<rand_chacha::ChaCha8Rng>(z, &self.codebooks, None)
    }

    /// Decodes a summed code back to motion frames, stripping any encode padding.
    pub fn decode(&self, code_sum: &LatentSeq) -> Result<Tensor> {
        if !code_sum.quantized {
            return Err(Error::Config("decode expects a quantized latent; use decode_unquantized for debugging".into()));
        }
        self.decode_unquantized(code_sum)
    }

    /// Debug path that accepts raw encoder output.
    pub fn decode_unquantized(&self, latent: &LatentSeq) -> Result<Tensor> {
        if latent.dim() != self.config.code_dim {
            return Err(Error::dim(format!("{} latent dim", self.part), self.config.code_dim, latent.dim()));
        }
        let y = self.decoder.infer(&latent.data)?;
        let out = self.normalizer.invert(&y);
        let keep = out.rows().saturating_sub(latent.pad);
        Ok(out.slice_rows(0, keep))
    }

    /// encode, quantize with every layer, decode.
    pub fn reconstruct(&self, motion_part: &Tensor) -> Result<Tensor> {
        let z = self.encode_padded(motion_part)?;
        self.decode(&self.quantize(&z)?.code_sum)
    }

    /// Re-snaps an arbitrary latent (e.g. a diffusion output) onto the codebooks.
    pub fn requantize(&self, latent: &Tensor, pad: usize) -> Result<LatentSeq> {
        Ok(self.quantize(&LatentSeq::raw(latent.clone(), pad))?.code_sum)
    }
}

fn pad_to_multiple(x: &Tensor) -> (Tensor, usize) {
    let n = x.rows();
    let pad = (DOWNSAMPLE - n % DOWNSAMPLE) % DOWNSAMPLE;
    if pad == 0 {
        return (x.clone(), 0);
    }
    let last = x.slice_rows(n - 1, n);
    let mut parts = vec![x];
    parts.extend(std::iter::repeat_n(&last, pad));
    (Tensor::vcat(&parts).expect("same width"), pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> RvqConfig {
        RvqConfig {
            width: 8,
            code_dim: 4,
            codebook_size: 8,
            ..RvqConfig::desk()
        }
    }

    fn stack(part: BodyPart) -> RvqStack {
        RvqStack::new(part, small(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn latent_length_is_quarter() {
        let s = stack(BodyPart::Upper);
        let x = Tensor::randn(&[128, 12], 0.5, &mut ChaCha8Rng::seed_from_u64(2));
        let z = s.encode(&x).unwrap();
        assert_eq!(z.data.shape(), &[32, 4]);
        assert_eq!(s.encode(&x).unwrap(), z);
        let q = s.quantize(&z).unwrap();
        assert_eq!(s.decode(&q.code_sum).unwrap().shape(), &[128, 12]);
    }

    #[test]
    fn unaligned_length_errors_unless_padded() {
        let s = stack(BodyPart::Hands);
        let x = Tensor::randn(&[30, 6], 0.5, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(matches!(s.encode(&x), Err(Error::Length(_))));
        let z = s.encode_padded(&x).unwrap();
        assert_eq!((z.len(), z.pad), (8, 2));
        assert_eq!(s.reconstruct(&x).unwrap().shape(), &[30, 6]);
    }

    #[test]
    fn wrong_channels_rejected() {
        let s = stack(BodyPart::Lower);
        assert!(matches!(s.encode(&Tensor::zeros(&[128, 12])), Err(Error::Dimension { .. })));
        let bad = LatentSeq {
            data: Tensor::zeros(&[32, 5]),
            quantized: true,
            pad: 0,
        };
        assert!(s.decode(&bad).is_err());
    }

    #[test]
    fn raw_latent_needs_debug_path() {
        let s = stack(BodyPart::Lower);
        let z = s.encode(&Tensor::zeros(&[64, 6])).unwrap();
        assert!(s.decode(&z).is_err());
        assert_eq!(s.decode_unquantized(&z).unwrap().shape(), &[64, 6]);
    }

    #[test]
    fn zero_code_decodes_to_constant_bias_path() {
        let s = stack(BodyPart::Upper);
        let zero = LatentSeq {
            data: Tensor::zeros(&[32, 4]),
            quantized: true,
            pad: 0,
        };
        let a = s.decode(&zero).unwrap();
        assert_eq!(a, s.decode(&zero).unwrap());
        // Zero-padded convs see a constant interior, so interior frames agree.
        let (lo, hi) = s.decoder.receptive_field(32, 95);
        assert!(lo >= 0 && hi < 32 * 4);
        for t in 32..96 {
            for c in 0..12 {
                assert!((a.at(t, c) - a.at(64, c)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn last_frame_outside_first_latent_receptive_field() {
        let s = stack(BodyPart::Upper);
        let (_, hi) = s.encoder.receptive_field(0, 0);
        assert!(hi < 127, "receptive field of latent 0 reaches frame {hi}");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[128, 12], 0.5, &mut rng);
        let mut y = x.clone();
        for c in 0..12 {
            y.set(127, c, y.at(127, c) + 1.0);
        }
        let (a, b) = (s.encode(&x).unwrap(), s.encode(&y).unwrap());
        assert_eq!(a.data.row(0), b.data.row(0));
        assert_ne!(a.data.row(31), b.data.row(31));
    }

    #[test]
    fn config_validation() {
        assert!(RvqConfig { dropout: 1.0, ..small() }.validate().is_err());
        assert!(RvqConfig { layers: 0, ..small() }.validate().is_err());
        let p = RvqConfig::paper();
        assert_eq!((p.layers, p.codebook_size, p.code_dim, p.dropout), (6, 512, 512, 0.2));
    }
}
