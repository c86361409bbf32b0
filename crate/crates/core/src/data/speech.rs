//! Beat-driven co-speech clips: gesture strokes on the upper body, energetic
//! finger oscillation, and a nearly static lower body.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::clip::{AudioTrack, BodyPart, MotionClip, TranscriptToken, CHANNELS, FPS};
use super::text::{HANDS_REST, STAND_POSE};
use crate::error::{Error, Result};
use crate::math::Tensor;

pub const TEMPO_RANGE: (f64, f64) = (90.0, 150.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeechConfig {
    pub frames: usize,
    pub tempo_min: f64,
    pub tempo_max: f64,
    pub stroke_amplitude: f64,
    /// Standard deviation of the additive white noise floor.
    pub noise: f64,
    /// Multiplies the energy envelope; 0 silences every stroke.
    pub energy_gain: f64,
    /// Shift the first beat by a random fraction of the beat interval.
    pub random_onset: bool,
}

impl Default for SpeechConfig {
    fn default() -> Self {
        Self {
            frames: super::CLIP_FRAMES,
            tempo_min: TEMPO_RANGE.0,
            tempo_max: TEMPO_RANGE.1,
            stroke_amplitude: 0.6,
            noise: 0.01,
            energy_gain: 1.0,
            random_onset: true,
        }
    }
}

impl SpeechConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = TEMPO_RANGE;
        if !(lo..=hi).contains(&self.tempo_min) || !(lo..=hi).contains(&self.tempo_max) || self.tempo_min > self.tempo_max {
            return Err(Error::Config(format!(
                "tempo range [{}, {}] outside [{lo}, {hi}] BPM",
                self.tempo_min, self.tempo_max
            )));
        }
        if self.frames < 8 || self.noise < 0.0 || self.energy_gain < 0.0 {
            return Err(Error::Config("speech clip frames/noise/gain".into()));
        }
        Ok(())
    }
}

/// Frames between beats at `bpm`.
pub fn beat_interval(bpm: f64) -> f64 {
    60.0 / bpm * FPS
}

/// Width (frames) of a gesture stroke at the given beat interval.
pub fn stroke_width(interval: f64) -> f64 {
    0.33 * interval
}

pub fn gen_speech_clip<R: Rng + ?Sized>(cfg: &SpeechConfig, rng: &mut R) -> Result<(MotionClip, AudioTrack)> {
    cfg.validate()?;
    let n = cfg.frames;
    let tempo = if cfg.tempo_max > cfg.tempo_min {
        rng.random_range(cfg.tempo_min..=cfg.tempo_max)
    } else {
        cfg.tempo_min
    };
    let interval = beat_interval(tempo);
    let onset = if cfg.random_onset { rng.random_range(0.0..interval) } else { 0.0 };
    let mut beats = Vec::new();
    let mut k = 0.0;
    loop {
        let b = (onset + k * interval).round() as usize;
        if b >= n {
            break;
        }
        if beats.last().is_none_or(|&last| b > last) {
            beats.push(b);
        }
        k += 1.0;
    }

    let level = rng.random_range(0.5..1.0);
    let period = rng.random_range(60.0..120.0);
    let phase = rng.random_range(0.0..TAU);
    let energy: Vec<f64> = (0..n)
        .map(|t| (cfg.energy_gain * (level + 0.25 * (TAU * t as f64 / period + phase).sin())).clamp(0.0, 1.0))
        .collect();

    let mut noise = |std: f64| std * rng.sample::<f64, _>(StandardNormal);
    let mut frames = Tensor::zeros(&[n, CHANNELS]);

    let width = stroke_width(interval);
    for c in BodyPart::Upper.channels() {
        let base = 0.3 * ((c as f64) * 1.7).sin();
        let amp = cfg.stroke_amplitude * (0.5 + 0.5 * ((c as f64) * 0.9).cos().abs());
        for t in 0..n {
            let stroke: f64 = beats
                .iter()
                .map(|&b| {
                    let d = t as f64 - b as f64;
                    energy[b] * (-d * d / (2.0 * width * width)).exp()
                })
                .sum();
            frames.set(t, c, base + amp * stroke);
        }
    }

    let hand_hz = 2.0 + (tempo - TEMPO_RANGE.0) / (TEMPO_RANGE.1 - TEMPO_RANGE.0);
    for (i, c) in BodyPart::Hands.channels().enumerate() {
        let ph = (i as f64) * 1.1;
        for t in 0..n {
            let osc = (TAU * hand_hz * t as f64 / FPS + ph + phase).sin();
            frames.set(t, c, HANDS_REST[i] + 0.25 * energy[t] * osc);
        }
    }

    let sway_phase = phase * 0.5;
    for (i, c) in BodyPart::Lower.channels().enumerate() {
        let sway = if i < 5 { 0.02 } else { 0.0 };
        for t in 0..n {
            let v = STAND_POSE[i] + sway * (TAU * 0.25 * t as f64 / FPS + sway_phase + i as f64).sin();
            frames.set(t, c, v);
        }
    }

    for v in frames.data_mut() {
        *v += noise(cfg.noise);
    }

    let mut tokens = Vec::new();
    let mut start = 0usize;
    while start < n {
        let len = rng.random_range(4..=10usize);
        tokens.push(TranscriptToken {
            id: rng.random_range(0..64),
            start,
            end: (start + len).min(n),
        });
        start += len;
    }

    let audio = AudioTrack {
        beat_times: beats,
        energy,
        tokens,
    };
    audio.validate()?;
    Ok((MotionClip::new(frames)?, audio))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
        let v: Vec<f64> = xs.collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    fn part_variance(clip: &MotionClip, part: BodyPart) -> f64 {
        let r = part.channels();
        let n = clip.len();
        r.clone()
            .map(|c| variance((0..n).map(|t| clip.frames.at(t, c))))
            .sum::<f64>()
            / r.len() as f64
    }

    #[test]
    fn silent_energy_leaves_noise_floor() {
        let cfg = SpeechConfig {
            energy_gain: 0.0,
            ..SpeechConfig::default()
        };
        let (clip, _) = gen_speech_clip(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for c in BodyPart::Upper.channels() {
            let v = variance((0..clip.len()).map(|t| clip.frames.at(t, c)));
            assert!(v <= 2.0 * cfg.noise * cfg.noise, "channel {c} variance {v}");
        }
    }

    #[test]
    fn strokes_peak_on_beats_at_120_bpm() {
        let cfg = SpeechConfig {
            tempo_min: 120.0,
            tempo_max: 120.0,
            random_onset: false,
            ..SpeechConfig::default()
        };
        let (clip, audio) = gen_speech_clip(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let expected: Vec<usize> = (0..clip.len()).step_by(15).collect();
        assert_eq!(audio.beat_times, expected);
        // Oracle: argmax of the summed upper channels within half a beat of each beat.
        let upper: Vec<f64> = (0..clip.len())
            .map(|t| BodyPart::Upper.channels().map(|c| clip.frames.at(t, c)).sum())
            .collect();
        for &b in &audio.beat_times {
            let lo = b.saturating_sub(7);
            let hi = (b + 7).min(clip.len() - 1);
            let arg = (lo..=hi).max_by(|&i, &j| upper[i].total_cmp(&upper[j])).unwrap();
            assert!(arg.abs_diff(b) <= 2, "beat {b} peak at {arg}");
        }
    }

    #[test]
    fn lower_body_is_stable() {
        for seed in 0..10 {
            let (clip, _) = gen_speech_clip(&SpeechConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(part_variance(&clip, BodyPart::Lower) < 0.25 * part_variance(&clip, BodyPart::Upper));
        }
    }

    #[test]
    fn tempo_outside_range_is_config_error() {
        let cfg = SpeechConfig {
            tempo_max: 200.0,
            ..SpeechConfig::default()
        };
        assert!(matches!(
            gen_speech_clip(&cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn audio_track_invariants() {
        let (clip, audio) = gen_speech_clip(&SpeechConfig::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        audio.validate().unwrap();
        assert_eq!(audio.energy.len(), clip.len());
        assert_eq!(audio.frame_features().shape(), &[clip.len(), 3]);
    }
}
