use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Tensor;

pub const FPS: f64 = 30.0;
/// Training clips and generation windows are this many frames long.
pub const CLIP_FRAMES: usize = 128;
pub const CHANNELS: usize = 24;
/// Absolute bound on any generated channel value.
pub const VALUE_BOUND: f64 = std::f64::consts::PI + 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyPart {
    Upper,
    Hands,
    Lower,
}

impl BodyPart {
    pub const ALL: [BodyPart; 3] = [BodyPart::Upper, BodyPart::Hands, BodyPart::Lower];

    pub fn channels(self) -> Range<usize> {
        match self {
            BodyPart::Upper => 0..12,
            BodyPart::Hands => 12..18,
            BodyPart::Lower => 18..24,
        }
    }

    pub fn width(self) -> usize {
        self.channels().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            BodyPart::Upper => "upper",
            BodyPart::Hands => "hands",
            BodyPart::Lower => "lower",
        }
    }

    pub fn index(self) -> usize {
        match self {
            BodyPart::Upper => 0,
            BodyPart::Hands => 1,
            BodyPart::Lower => 2,
        }
    }
}

impl std::fmt::Display for BodyPart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BodyPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(BodyPart::Upper),
            "hands" => Ok(BodyPart::Hands),
            "lower" => Ok(BodyPart::Lower),
            other => Err(Error::Config(format!("unknown body part {other:?}"))),
        }
    }
}

/// Channel ranges as written to clip files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartLayout {
    pub upper: [usize; 2],
    pub hands: [usize; 2],
    pub lower: [usize; 2],
}

impl Default for PartLayout {
    fn default() -> Self {
        let r = |p: BodyPart| [p.channels().start, p.channels().end];
        Self {
            upper: r(BodyPart::Upper),
            hands: r(BodyPart::Hands),
            lower: r(BodyPart::Lower),
        }
    }
}

/// A `frames x 24` joint-angle-like trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionClip {
    pub fps: f64,
    pub frames: Tensor,
}

impl MotionClip {
    pub fn new(frames: Tensor) -> Result<Self> {
        let clip = Self { fps: FPS, frames };
        clip.validate()?;
        Ok(clip)
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.shape().len() != 2 || self.frames.cols() != CHANNELS {
            return Err(Error::dim("motion clip", format!("[N, {CHANNELS}]"), format!("{:?}", self.frames.shape())));
        }
        if let Some(v) = self.frames.data().iter().find(|v| !v.is_finite() || v.abs() > VALUE_BOUND) {
            return Err(Error::NonFinite(format!("motion value {v} outside +-(pi+1)")));
        }
        Ok(())
    }

    pub fn part(&self, part: BodyPart) -> Tensor {
        let r = part.channels();
        self.frames.slice_cols(r.start, r.end)
    }

    /// Reassembles a clip from its three part slices.
    pub fn from_parts(upper: &Tensor, hands: &Tensor, lower: &Tensor) -> Result<Self> {
        let frames = Tensor::hcat(&[upper, hands, lower])?;
        if frames.cols() != CHANNELS {
            return Err(Error::dim("from_parts", CHANNELS, frames.cols()));
        }
        Ok(Self { fps: FPS, frames })
    }
}

/// One word of a speech transcript and the frames it spans.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptToken {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioTrack {
    #[serde(rename = "beats")]
    pub beat_times: Vec<usize>,
    pub energy: Vec<f64>,
    pub tokens: Vec<TranscriptToken>,
}

/// Channels of the raw per-frame audio description fed to the audio network.
pub const AUDIO_RAW_CHANNELS: usize = 3;

impl AudioTrack {
    pub fn len(&self) -> usize {
        self.energy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energy.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.energy.len();
        if self.beat_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Structure("beat times not strictly increasing".into()));
        }
        if self.beat_times.iter().any(|&b| b >= n) {
            return Err(Error::Length(format!("beat beyond {n} frames")));
        }
        if self.energy.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::Structure("energy outside [0, 1]".into()));
        }
        Ok(())
    }

    /// `[N, 3]`: beat pulse, energy envelope, transcript-token onsets.
    pub fn frame_features(&self) -> Tensor {
        let n = self.energy.len();
        let mut t = Tensor::zeros(&[n, AUDIO_RAW_CHANNELS]);
        for &b in &self.beat_times {
            t.set(b, 0, 1.0);
        }
        for (i, &e) in self.energy.iter().enumerate() {
            t.set(i, 1, e);
        }
        for tok in &self.tokens {
            if tok.start < n {
                t.set(tok.start, 2, 1.0);
            }
        }
        t
    }

    /// Frames `start..start + len`, beats and tokens re-based.
    pub fn window(&self, start: usize, len: usize) -> AudioTrack {
        let end = (start + len).min(self.energy.len());
        AudioTrack {
            beat_times: self
                .beat_times
                .iter()
                .filter(|&&b| b >= start && b < end)
                .map(|b| b - start)
                .collect(),
            energy: self.energy[start.min(end)..end].to_vec(),
            tokens: self
                .tokens
                .iter()
                .filter(|t| t.start >= start && t.start < end)
                .map(|t| TranscriptToken {
                    id: t.id,
                    start: t.start - start,
                    end: (t.end.min(end)) - start,
                })
                .collect(),
        }
    }
}

/// Template label per body part, used as ground truth by evaluation oracles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartLabels {
    pub upper: String,
    pub hands: String,
    pub lower: String,
}
