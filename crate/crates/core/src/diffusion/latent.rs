//! The diffusion latent: per-part summed codes stacked on the channel axis.

use std::ops::Range;

use crate::data::{BodyPart, MotionClip, VALUE_BOUND};
use crate::error::{Error, Result};
use crate::math::normalize::MIN_CHANNEL_STD;
use crate::math::{Normalizer, Tensor};
use crate::rvq::RvqStack;

pub fn part_columns(part: BodyPart, code_dim: usize) -> Range<usize> {
    let i = part.index();
    i * code_dim..(i + 1) * code_dim
}

fn check_stacks(stacks: &[RvqStack; 3]) -> Result<usize> {
    let d = stacks[0].config.code_dim;
    for (s, part) in stacks.iter().zip(BodyPart::ALL) {
        if s.part != part {
            return Err(Error::Structure(format!("stack for {} found in the {part} slot", s.part)));
        }
        if s.config.code_dim != d {
            return Err(Error::Structure("body-part codecs disagree on code width".into()));
        }
    }
    Ok(d)
}

/// `[N / 4, 3·d]` summed codes of a clip, in raw code units.
pub fn stack_codes(stacks: &[RvqStack; 3], motion: &MotionClip) -> Result<Tensor> {
    check_stacks(stacks)?;
    let sums: Vec<Tensor> = stacks
        .iter()
        .map(|s| Ok(s.quantize(&s.encode(&motion.part(s.part))?)?.code_sum.data))
        .collect::<Result<_>>()?;
    Tensor::hcat(&sums.iter().collect::<Vec<_>>())
}

/// Per-channel mean, one pooled scale per body part.
pub fn fit_latent_norm(latents: &[Tensor], code_dim: usize) -> Result<Normalizer> {
    let c = 3 * code_dim;
    let per_channel = Normalizer::fit(c, latents.iter())?;
    let mut std = vec![0.0; c];
    for part in BodyPart::ALL {
        let cols = part_columns(part, code_dim);
        let var = cols.clone().map(|k| per_channel.std.data()[k].powi(2)).sum::<f64>() / code_dim as f64;
        let s = var.sqrt().max(MIN_CHANNEL_STD);
        std[cols].iter_mut().for_each(|v| *v = s);
    }
    Ok(Normalizer {
        mean: per_channel.mean,
        std: Tensor::new(vec![c], std)?,
    })
}

/// Snaps a normalized latent back onto each part's codebooks and decodes it.
pub fn decode_latent(stacks: &[RvqStack; 3], norm: &Normalizer, z: &Tensor) -> Result<MotionClip> {
    let d = check_stacks(stacks)?;
    if z.cols() != 3 * d {
        return Err(Error::dim("latent", 3 * d, z.cols()));
    }
    let raw = norm.invert(z);
    let parts: Vec<Tensor> = stacks
        .iter()
        .map(|s| {
            let cols = part_columns(s.part, d);
            let code = s.requantize(&raw.slice_cols(cols.start, cols.end), 0)?;
            Ok(s.decode(&code)?.map(|v| v.clamp(-VALUE_BOUND, VALUE_BOUND)))
        })
        .collect::<Result<_>>()?;
    MotionClip::from_parts(&parts[0], &parts[1], &parts[2])
}
