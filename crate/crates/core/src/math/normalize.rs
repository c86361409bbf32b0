use crate::error::{Error, Result};
use super::tensor::Tensor;

/// Floor on per-channel scale so near-constant channels are not blown up.
pub const MIN_CHANNEL_STD: f64 = 0.05;

/// Fixed per-channel affine map applied before the encoder and undone after the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Tensor,
    pub std: Tensor,
}

impl Normalizer {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            std: Tensor::full(&[channels], 1.0),
        }
    }

    pub fn fit<'a>(channels: usize, samples: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        let mut count = 0usize;
        for s in samples {
            if s.cols() != channels {
                return Err(Error::dim("normalizer sample", channels, s.cols()));
            }
            for r in 0..s.rows() {
                for (c, v) in s.row(r).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += s.rows();
        }
        if count == 0 {
            return Err(Error::Empty("normalizer samples".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(MIN_CHANNEL_STD))
            .collect();
        Ok(Self {
            mean: Tensor::new(vec![channels], mean)?,
            std: Tensor::new(vec![channels], std)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let (m, s) = (self.mean.data(), self.std.data());
        let c = m.len();
        Tensor::from_fn(x.shape(), |i| (x.data()[i] - m[i % c]) / s[i % c])
    }

    pub fn invert(&self, y: &Tensor) -> Tensor {
        let (m, s) = (self.mean.data(), self.std.data());
        let c = m.len();
        Tensor::from_fn(y.shape(), |i| y.data()[i] * s[i % c] + m[i % c])
    }

    /// Chain rule through [`Normalizer::invert`].
    pub fn invert_grad(&self, g: &Tensor) -> Tensor {
        let s = self.std.data();
        let c = s.len();
        Tensor::from_fn(g.shape(), |i| g.data()[i] * s[i % c])
    }
}
