//! Closed-form motion templates for the text-to-motion corpus.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::clip::{BodyPart, MotionClip, PartLabels, CHANNELS, FPS};
use super::vocab::{PromptTokens, Template};
use crate::error::{Error, Result};
use crate::math::Tensor;

pub const UPPER_REST: [f64; 12] = [0.05, -0.05, 0.15, -0.15, 0.1, -0.1, 0.2, 0.0, 0.2, 0.0, 0.05, -0.05];
pub const HANDS_REST: [f64; 6] = [0.1, 0.2, 0.3, 0.1, 0.2, 0.3];
/// Lower-body standing pose; the last channel is forward root velocity.
pub const STAND_POSE: [f64; 6] = [0.1, -0.1, 0.05, -0.05, 0.0, 0.0];
const SIT_POSE: [f64; 5] = [1.4, 1.4, -1.5, -1.5, 0.0];
const KNEEL_POSE: [f64; 5] = [0.3, 1.6, -0.2, -2.0, -0.4];

const WALK_AMP: [f64; 5] = [0.5, 0.5, 0.35, 0.35, 0.15];
const WALK_PHASE: [f64; 5] = [0.0, PI, 0.5 * PI, 1.5 * PI, 0.0];
const WALK_ROOT_SPEED: f64 = 0.6;
const CIRCLE_AMP: [f64; 5] = [0.3, 0.55, 0.2, 0.45, 0.25];
const CIRCLE_PHASE: [f64; 5] = [0.0, PI, 0.5 * PI, 1.5 * PI, 0.5 * PI];
const CIRCLE_ROOT_SPEED: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextConfig {
    pub frames: usize,
    /// Standard deviation of the additive per-frame jitter.
    pub jitter: f64,
    pub step_hz: f64,
    pub circle_step_hz: f64,
    /// Probability that a single-part template is paired with a second one.
    pub combo_prob: f64,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            frames: super::CLIP_FRAMES,
            jitter: 0.01,
            step_hz: 1.0,
            circle_step_hz: 0.75,
            combo_prob: 0.25,
        }
    }
}

/// Per-clip free parameters of a template rendering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemplateParams {
    pub phase: f64,
    pub amplitude: f64,
    pub ramp_start: f64,
}

impl TemplateParams {
    pub const CANONICAL: TemplateParams = TemplateParams {
        phase: 0.0,
        amplitude: 1.0,
        ramp_start: 0.0,
    };

    fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            phase: rng.random_range(0.0..TAU),
            amplitude: rng.random_range(0.9..1.1),
            ramp_start: rng.random_range(0.0..30.0),
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn ramp(t: usize, start: f64, len: f64) -> f64 {
    smoothstep((t as f64 - start) / len)
}

/// Rest pose for every channel.
pub fn rest_frames(frames: usize) -> Tensor {
    let mut out = Tensor::zeros(&[frames, CHANNELS]);
    for t in 0..frames {
        let row = out.row_mut(t);
        row[..12].copy_from_slice(&UPPER_REST);
        row[12..18].copy_from_slice(&HANDS_REST);
        row[18..].copy_from_slice(&STAND_POSE);
    }
    out
}

/// Writes one template's channels into `frames` (which starts at rest).
pub fn apply_template(frames: &mut Tensor, template: Template, cfg: &TextConfig, p: TemplateParams) {
    let n = frames.rows();
    let lower0 = BodyPart::Lower.channels().start;
    match template {
        Template::StandStill => {}
        Template::Walk | Template::Circle => {
            let (hz, amp, phase, speed) = if template == Template::Walk {
                (cfg.step_hz, WALK_AMP, WALK_PHASE, WALK_ROOT_SPEED)
            } else {
                (cfg.circle_step_hz, CIRCLE_AMP, CIRCLE_PHASE, CIRCLE_ROOT_SPEED)
            };
            for t in 0..n {
                let w = TAU * hz * t as f64 / FPS + p.phase;
                for c in 0..5 {
                    frames.set(t, lower0 + c, STAND_POSE[c] + p.amplitude * amp[c] * (w + phase[c]).sin());
                }
                frames.set(t, lower0 + 5, speed * p.amplitude);
            }
        }
        Template::Sit | Template::Kneel => {
            let target = if template == Template::Sit { SIT_POSE } else { KNEEL_POSE };
            let len = if template == Template::Sit { 24.0 } else { 30.0 };
            for t in 0..n {
                let a = ramp(t, p.ramp_start, len);
                for c in 0..5 {
                    frames.set(t, lower0 + c, STAND_POSE[c] + a * (target[c] - STAND_POSE[c]));
                }
                if template == Template::Sit {
                    frames.set(t, 0, UPPER_REST[0] + 0.3 * a);
                    frames.set(t, 1, UPPER_REST[1] + 0.3 * a);
                }
            }
        }
        Template::Wave => {
            for t in 0..n {
                let up = ramp(t, p.ramp_start * 0.3, 10.0);
                frames.set(t, 6, UPPER_REST[6] + 1.0 * up);
                let w = TAU * 1.5 * t as f64 / FPS + p.phase;
                frames.set(t, 7, UPPER_REST[7] + 0.5 * p.amplitude * up * w.sin());
            }
        }
        Template::Stretch => {
            for t in 0..n {
                let a = smoothstep(t as f64 / n as f64) * p.amplitude;
                for c in 2..6 {
                    frames.set(t, c, UPPER_REST[c] + 0.9 * a);
                }
            }
        }
    }
}

/// Noise-free lower-body walk channels (`[frames, 6]`) at zero phase.
pub fn walk_template(frames: usize, cfg: &TextConfig) -> Tensor {
    let mut f = rest_frames(frames);
    apply_template(&mut f, Template::Walk, cfg, TemplateParams::CANONICAL);
    let r = BodyPart::Lower.channels();
    f.slice_cols(r.start, r.end)
}

fn check_compatible(templates: &[Template]) -> Result<()> {
    if templates.is_empty() || templates.len() > 2 {
        return Err(Error::Config(format!("{} templates; expected 1 or 2", templates.len())));
    }
    if templates.len() == 2 {
        let a = templates[0].parts();
        let b = templates[1].parts();
        if a.iter().any(|p| b.contains(p)) {
            return Err(Error::Config(format!(
                "templates {} and {} drive the same body part",
                templates[0], templates[1]
            )));
        }
    }
    Ok(())
}

pub fn labels_for(templates: &[Template]) -> PartLabels {
    let find = |part: BodyPart| {
        templates
            .iter()
            .find(|t| t.parts().contains(&part))
            .map_or("rest".to_string(), |t| t.word().to_string())
    };
    PartLabels {
        upper: find(BodyPart::Upper),
        hands: "rest".into(),
        lower: find(BodyPart::Lower),
    }
}

pub fn gen_text_clip<R: Rng + ?Sized>(
    cfg: &TextConfig,
    templates: &[Template],
    rng: &mut R,
) -> Result<(MotionClip, PromptTokens, PartLabels)> {
    check_compatible(templates)?;
    let mut frames = rest_frames(cfg.frames);
    for &t in templates {
        let params = TemplateParams::draw(rng);
        apply_template(&mut frames, t, cfg, params);
    }
    for v in frames.data_mut() {
        *v += cfg.jitter * rng.sample::<f64, _>(StandardNormal);
    }
    let mut ordered = templates.to_vec();
    ordered.sort_by_key(|t| t.parts()[0] != BodyPart::Upper);
    let prompt = PromptTokens::from_templates(&ordered);
    Ok((MotionClip::new(frames)?, prompt, labels_for(templates)))
}

/// Possibly pairs a primary template with one driving the complementary part.
pub fn pick_companion<R: Rng + ?Sized>(primary: Template, cfg: &TextConfig, rng: &mut R) -> Option<Template> {
    const UPPER: [Template; 2] = [Template::Wave, Template::Stretch];
    const LOWER: [Template; 4] = [Template::Walk, Template::Circle, Template::Kneel, Template::StandStill];
    let draw: f64 = rng.random();
    if draw >= cfg.combo_prob || primary == Template::Sit {
        return None;
    }
    if UPPER.contains(&primary) {
        Some(LOWER[rng.random_range(0..LOWER.len())])
    } else {
        Some(UPPER[rng.random_range(0..UPPER.len())])
    }
}
