use std::collections::BTreeMap;

use crate::data::BodyPart;
use crate::diffusion::part_columns;
use crate::error::{Error, Result};
use crate::math::Tensor;

/// Channels of the stacked latent owned by one body part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartMask {
    pub part: BodyPart,
    pub mask: Vec<bool>,
}

/// The standard three-way split of a latent with `code_dim` channels per part.
pub fn part_masks(code_dim: usize) -> Vec<PartMask> {
    BodyPart::ALL
        .iter()
        .map(|&part| {
            let cols = part_columns(part, code_dim);
            PartMask {
                part,
                mask: (0..3 * code_dim).map(|c| cols.contains(&c)).collect(),
            }
        })
        .collect()
}

/// Owner of every channel, or an error if the masks are not a partition.
pub fn check_partition(masks: &[PartMask]) -> Result<Vec<BodyPart>> {
    let Some(first) = masks.first() else {
        return Err(Error::Partition("no masks".into()));
    };
    let channels = first.mask.len();
    let mut seen = Vec::new();
    for m in masks {
        if m.mask.len() != channels {
            return Err(Error::Partition(format!("mask lengths {} and {}", channels, m.mask.len())));
        }
        if seen.contains(&m.part) {
            return Err(Error::Partition(format!("{} appears twice", m.part)));
        }
        seen.push(m.part);
    }
    let mut owner = Vec::with_capacity(channels);
    for c in 0..channels {
        let owners: Vec<BodyPart> = masks.iter().filter(|m| m.mask[c]).map(|m| m.part).collect();
        match owners.as_slice() {
            [p] => owner.push(*p),
            [] => return Err(Error::Partition(format!("channel {c} has no owner"))),
            many => return Err(Error::Partition(format!("channel {c} owned by {many:?}"))),
        }
    }
    Ok(owner)
}

/// Masked sum of per-part estimates: each output channel comes from its owner.
pub fn partwise_fuse(estimates: &BTreeMap<BodyPart, Tensor>, masks: &[PartMask]) -> Result<Tensor> {
    let owner = check_partition(masks)?;
    for m in masks {
        let Some(e) = estimates.get(&m.part) else {
            return Err(Error::Partition(format!("no estimate for {}", m.part)));
        };
        if e.shape().len() != 2 || e.cols() != owner.len() {
            return Err(Error::dim(format!("{} estimate", m.part), format!("[n, {}]", owner.len()), format!("{:?}", e.shape())));
        }
    }
    let rows = estimates[&masks[0].part].rows();
    if masks.iter().any(|m| estimates[&m.part].rows() != rows) {
        return Err(Error::Structure("per-part estimates differ in length".into()));
    }
    let c = owner.len();
    Ok(Tensor::from_fn(&[rows, c], |k| estimates[&owner[k % c]].data()[k]))
}
