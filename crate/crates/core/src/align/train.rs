use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{losses_and_grads, AlignLosses, PairNoise};
use super::space::{motion_features, AlignConfig, AlignSpace};
use crate::data::PromptTokens;
use crate::error::{Error, Result};
use crate::math::{AdamConfig, Normalizer, OptimState, Tensor};
use crate::persist::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignTrainReport {
    pub epoch_losses: Vec<AlignLosses>,
    pub steps: u64,
    pub seconds: f64,
}

/// One optimizer step over a batch; returns the batch losses.
pub fn align_step(
    space: &mut AlignSpace,
    opt: &mut OptimState,
    batch: &[(&PromptTokens, &Tensor)],
    noise: &[PairNoise],
) -> Result<AlignLosses> {
    let (losses, grads) = losses_and_grads(space, batch, noise)?;
    let grads: Vec<Tensor> = grads.text.into_iter().chain(grads.motion).chain(grads.decoder).collect();
    let mut names: Vec<String> = Vec::new();
    for (prefix, net) in [("text", &space.text_encoder), ("motion", &space.motion_encoder), ("decoder", &space.recon_decoder)] {
        names.extend(net.named_params().into_iter().map(|(n, _)| format!("{prefix}.{n}")));
    }
    let mut tensors = space.text_encoder.params_mut();
    tensors.extend(space.motion_encoder.params_mut());
    tensors.extend(space.recon_decoder.params_mut());
    let mut params: Vec<(String, &mut Tensor)> = names.into_iter().zip(tensors).collect();
    opt.step(&mut params, &grads)?;
    Ok(losses)
}

/// Trains the alignment space on (prompt, motion frames) pairs.
pub fn train_align(pairs: &[(PromptTokens, Tensor)], config: &AlignConfig, run_seed: u64) -> Result<(AlignSpace, AlignTrainReport)> {
    config.validate()?;
    if pairs.len() < 2 {
        return Err(Error::Empty("alignment training needs at least two prompted clips".into()));
    }
    let started = Instant::now();
    let mut space = AlignSpace::new(config.clone(), &mut seed::stream(run_seed, "align-init"))?;
    let feats: Vec<Tensor> = pairs.iter().map(|(_, m)| motion_features(m)).collect::<Result<_>>()?;
    space.motion_norm = Normalizer::fit(feats[0].cols(), feats.iter())?;

    let mut opt = OptimState::new(AdamConfig::with_lr(config.lr));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut seed::stream_indexed(run_seed, "align-order", &[epoch as u64]));
        let mut acc = AlignLosses::default();
        let mut batches = 0.0;
        for chunk in order.chunks(config.batch) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<(&PromptTokens, &Tensor)> = chunk.iter().map(|&i| (&pairs[i].0, &pairs[i].1)).collect();
            let noise: Vec<PairNoise> = chunk
                .iter()
                .map(|&i| PairNoise::draw(config.dim, &mut seed::stream_indexed(run_seed, "align-noise", &[epoch as u64, i as u64])))
                .collect();
            let l = align_step(&mut space, &mut opt, &batch, &noise).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence {
                    epoch,
                    step: step as usize,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            acc.recon += l.recon;
            acc.kl += l.kl;
            acc.embed += l.embed;
            acc.nce += l.nce;
            acc.total += l.total;
            batches += 1.0;
            step += 1;
        }
        epoch_losses.push(AlignLosses {
            recon: acc.recon / batches,
            kl: acc.kl / batches,
            embed: acc.embed / batches,
            nce: acc.nce / batches,
            total: acc.total / batches,
        });
    }
    Ok((
        space,
        AlignTrainReport {
            epoch_losses,
            steps: step,
            seconds: started.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_corpus, CorpusConfig};

    fn pairs(n: usize) -> Vec<(PromptTokens, Tensor)> {
        let cfg = CorpusConfig {
            s2m: 1,
            t2m: n,
            ..CorpusConfig::default()
        };
        build_corpus(&cfg, 2)
            .unwrap()
            .clips
            .into_iter()
            .filter_map(|c| c.prompt.map(|p| (p, c.motion.frames)))
            .collect()
    }

    #[test]
    fn short_run_is_deterministic_and_descends() {
        let cfg = AlignConfig {
            epochs: 6,
            batch: 8,
            ..AlignConfig::desk()
        };
        let data = pairs(24);
        let (a, ra) = train_align(&data, &cfg, 5).unwrap();
        let (b, rb) = train_align(&data, &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.epoch_losses, rb.epoch_losses);
        assert!(ra.epoch_losses.last().unwrap().total < ra.epoch_losses[0].total);
    }

    #[test]
    fn needs_pairs() {
        assert!(train_align(&pairs(1)[..1], &AlignConfig::desk(), 1).is_err());
    }
}
