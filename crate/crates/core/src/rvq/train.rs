use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codebook::Codebook;
use super::quantize::{latent_grad, quantize_residual, rvq_loss, LatentSeq, QuantizeResult};
use super::stack::{RvqConfig, RvqStack};
use crate::data::BodyPart;
use crate::error::{Error, Result};
use crate::math::{accumulate, clip_global_norm, zero_grads, AdamConfig, Normalizer, OptimState, Tensor};
use crate::persist::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvqTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`, reached by cosine decay.
    pub lr_floor: f64,
    pub grad_clip: f64,
    /// Turn off EMA updates and resets (codebooks stay fixed).
    pub codebook_updates: bool,
}

impl Default for RvqTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch: 16,
            lr: 2e-3,
            lr_floor: 0.05,
            grad_clip: 5.0,
            codebook_updates: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvqTrainReport {
    pub part: BodyPart,
    pub epoch_losses: Vec<f64>,
    /// Per layer: fraction of entries selected at least once in the final epoch.
    pub last_epoch_usage: Vec<f64>,
    pub resets: usize,
    pub steps: u64,
    pub seconds: f64,
}

/// Everything one clip contributes to a training step.
pub struct ClipStep {
    pub loss: f64,
    pub encoder_grads: Vec<Tensor>,
    pub decoder_grads: Vec<Tensor>,
    /// Gradient arriving at the quantized code from the decoder.
    pub code_grad: Tensor,
    /// Gradient handed to the encoder output.
    pub latent_grad: Tensor,
    pub quant: QuantizeResult,
}

/// Forward and backward pass for one part slice with the quantizer in the loop.
pub fn clip_step<R: Rng + ?Sized>(stack: &RvqStack, motion: &Tensor, dropout: Option<(f64, &mut R)>) -> Result<ClipStep> {
    let x = stack.normalizer.apply(motion);
    let enc_acts = stack.encoder.forward(&x)?;
    let z = LatentSeq::raw(enc_acts.last().expect("output").clone(), 0);
    let quant = quantize_residual(&z, &stack.codebooks, dropout)?;
    let dec_acts = stack.decoder.forward(&quant.code_sum.data)?;
    let recon = stack.normalizer.invert(dec_acts.last().expect("output"));
    let loss = rvq_loss(motion, &recon, &quant, stack.config.beta)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("rvq loss".into()));
    }
    let scale = 1.0 / motion.len() as f64;
    let g_recon = recon.zip_map(motion, |r, m| scale * sign(r - m))?;
    let g_out = stack.normalizer.invert_grad(&g_recon);
    let (decoder_grads, code_grad) = stack.decoder.backward(&dec_acts, &g_out)?;
    let g_z = latent_grad(&code_grad, &quant, stack.config.beta)?;
    let (encoder_grads, _) = stack.encoder.backward(&enc_acts, &g_z)?;
    Ok(ClipStep {
        loss,
        encoder_grads,
        decoder_grads,
        code_grad,
        latent_grad: g_z,
        quant,
    })
}

/// Cosine decay from `lr` to `lr * floor` as `progress` goes 0 -> 1.
pub fn cosine_lr(lr: f64, floor: f64, progress: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    lr * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Seeds every codebook layer with distinct random rows of the residuals it
/// will see, quantizing layer by layer.
fn init_codebooks(stack: &mut RvqStack, latents: &[Tensor], rng: &mut impl Rng) -> Result<()> {
    let mut residuals: Vec<Tensor> = latents.to_vec();
    for q in 0..stack.codebooks.len() {
        let pool = Tensor::vcat(&residuals.iter().collect::<Vec<_>>())?;
        let mut rows: Vec<usize> = (0..pool.rows()).collect();
        rows.shuffle(rng);
        let k = stack.config.codebook_size;
        let entries = Tensor::from_fn(&[k, pool.cols()], |i| {
            let (r, c) = (i / pool.cols(), i % pool.cols());
            pool.at(rows[r % rows.len()], c)
        });
        stack.codebooks[q] = Codebook::new(entries, stack.config.ema_decay)?;
        let book = std::slice::from_ref(&stack.codebooks[q]);
        residuals = residuals
            .iter()
            .map(|r| {
                let out = quantize_residual::<rand_chacha::ChaCha8Rng>(&LatentSeq::raw(r.clone(), 0), book, None)?;
                Ok(out.residuals[0].clone())
            })
            .collect::<Result<_>>()?;
    }
    Ok(())
}

/// Trains one part's codec on `motions` (full clips; the part slice is taken here).
pub fn train_part(
    part: BodyPart,
    motions: &[Tensor],
    config: &RvqConfig,
    train: &RvqTrainConfig,
    run_seed: u64,
) -> Result<(RvqStack, RvqTrainReport)> {
    if motions.is_empty() {
        return Err(Error::Empty("rvq training corpus".into()));
    }
    if train.batch == 0 || train.epochs == 0 {
        return Err(Error::Config("rvq batch and epochs must be positive".into()));
    }
    let started = Instant::now();
    let tag = format!("rvq-{part}");
    let slices: Vec<Tensor> = motions.iter().map(|m| {
        let r = part.channels();
        m.slice_cols(r.start, r.end)
    }).collect();

    let mut stack = RvqStack::new(part, config.clone(), &mut seed::stream(run_seed, &format!("{tag}-init")))?;
    stack.normalizer = Normalizer::fit(part.width(), slices.iter())?;
    let latents: Vec<Tensor> = slices
        .par_iter()
        .map(|s| stack.encode(s).map(|z| z.data))
        .collect::<Result<_>>()?;
    init_codebooks(&mut stack, &latents, &mut seed::stream(run_seed, &format!("{tag}-codebook-init")))?;

    let mut opt = OptimState::new(AdamConfig::with_lr(train.lr));
    let mut epoch_losses = Vec::with_capacity(train.epochs);
    let mut usage = vec![vec![false; config.codebook_size]; config.layers];
    let mut resets = 0;
    let mut step = 0u64;
    let total_steps = (train.epochs * slices.len().div_ceil(train.batch)) as f64;
    for epoch in 0..train.epochs {
        let mut order: Vec<usize> = (0..slices.len()).collect();
        order.shuffle(&mut seed::stream_indexed(run_seed, &format!("{tag}-order"), &[epoch as u64]));
        let last_epoch = epoch + 1 == train.epochs;
        let mut loss_sum = 0.0;
        for batch in order.chunks(train.batch) {
            let steps: Vec<ClipStep> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = seed::stream_indexed(run_seed, &format!("{tag}-dropout"), &[epoch as u64, i as u64]);
                    clip_step(&stack, &slices[i], Some((config.dropout, &mut rng)))
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Divergence {
                        epoch,
                        step: step as usize,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;

            let mut enc = zero_grads(&stack.encoder);
            let mut dec = zero_grads(&stack.decoder);
            let mut batch_loss = 0.0;
            for s in &steps {
                accumulate(&mut enc, &s.encoder_grads)?;
                accumulate(&mut dec, &s.decoder_grads)?;
                batch_loss += s.loss;
            }
            let inv = 1.0 / steps.len() as f64;
            let mut grads: Vec<Tensor> = enc.into_iter().chain(dec).map(|g| g.scale(inv)).collect();
            clip_global_norm(&mut grads, train.grad_clip);
            opt.config.lr = cosine_lr(train.lr, train.lr_floor, step as f64 / total_steps);
            {
                let mut params: Vec<(String, &mut Tensor)> = Vec::new();
                let enc_names: Vec<String> = stack.encoder.named_params().into_iter().map(|(n, _)| format!("encoder.{n}")).collect();
                let dec_names: Vec<String> = stack.decoder.named_params().into_iter().map(|(n, _)| format!("decoder.{n}")).collect();
                params.extend(enc_names.into_iter().zip(stack.encoder.params_mut()));
                params.extend(dec_names.into_iter().zip(stack.decoder.params_mut()));
                opt.step(&mut params, &grads)?;
            }

            if train.codebook_updates {
                let mut reset_rng = seed::stream_indexed(run_seed, &format!("{tag}-reset"), &[step]);
                for q in 0..config.layers {
                    let used: Vec<&ClipStep> = steps.iter().filter(|s| s.quant.layers_used > q).collect();
                    if used.is_empty() {
                        continue;
                    }
                    let assignments = used.iter().flat_map(|s| {
                        let input = &s.quant.layer_inputs[q];
                        s.quant.indices[q].iter().enumerate().map(move |(t, &k)| (k, input.row(t)))
                    });
                    stack.codebooks[q].ema_update(assignments);
                    let pool = Tensor::vcat(&used.iter().map(|s| &s.quant.layer_inputs[q]).collect::<Vec<_>>())?;
                    resets += stack.codebooks[q].reset_dead(&pool, config.reset_threshold, &mut reset_rng)?;
                }
            }
            if last_epoch {
                for s in &steps {
                    for (q, idx) in s.quant.indices.iter().enumerate() {
                        for &k in idx {
                            usage[q][k] = true;
                        }
                    }
                }
            }
            batch_loss *= inv;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: step as usize,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss * steps.len() as f64;
            step += 1;
        }
        epoch_losses.push(loss_sum / slices.len() as f64);
    }
    let report = RvqTrainReport {
        part,
        epoch_losses,
        last_epoch_usage: usage
            .iter()
            .map(|u| u.iter().filter(|&&b| b).count() as f64 / config.codebook_size as f64)
            .collect(),
        resets,
        steps: step,
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok((stack, report))
}

/// Trains upper, hands and lower codecs on the same motions. Parts are
/// independent and train concurrently.
pub fn train_rvq(
    motions: &[Tensor],
    config: &RvqConfig,
    train: &RvqTrainConfig,
    run_seed: u64,
) -> Result<([RvqStack; 3], [RvqTrainReport; 3])> {
    let mut out: Vec<Result<(RvqStack, RvqTrainReport)>> = BodyPart::ALL
        .par_iter()
        .map(|&p| train_part(p, motions, config, train, run_seed))
        .collect();
    let lower = out.pop().expect("three parts")?;
    let hands = out.pop().expect("three parts")?;
    let upper = out.pop().expect("three parts")?;
    Ok(([upper.0, hands.0, lower.0], [upper.1, hands.1, lower.1]))
}

/// `Σ (recon − x)² / Σ (x − channel mean)²` over a set of full clips for one part.
pub fn relative_mse(stack: &RvqStack, motions: &[Tensor]) -> Result<f64> {
    if motions.is_empty() {
        return Err(Error::Empty("relative mse clips".into()));
    }
    let r = stack.part.channels();
    let slices: Vec<Tensor> = motions.iter().map(|m| m.slice_cols(r.start, r.end)).collect();
    let recons: Vec<Tensor> = slices.par_iter().map(|s| stack.reconstruct(s)).collect::<Result<_>>()?;
    let c = stack.channels();
    let mut mean = vec![0.0; c];
    let mut count = 0.0;
    for s in &slices {
        for t in 0..s.rows() {
            for (m, v) in mean.iter_mut().zip(s.row(t)) {
                *m += v;
            }
            count += 1.0;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let (mut err, mut var) = (0.0, 0.0);
    for (s, rec) in slices.iter().zip(&recons) {
        for t in 0..s.rows() {
            for ch in 0..c {
                err += (rec.at(t, ch) - s.at(t, ch)).powi(2);
                var += (s.at(t, ch) - mean[ch]).powi(2);
            }
        }
    }
    Ok(err / var.max(1e-12))
}

/// `[layer][entry]` selection counts over full-depth quantization of `motions`.
pub fn usage_counts(stack: &RvqStack, motions: &[Tensor]) -> Result<Vec<Vec<usize>>> {
    let r = stack.part.channels();
    let mut counts = vec![vec![0usize; stack.config.codebook_size]; stack.config.layers];
    for m in motions {
        let z = stack.encode_padded(&m.slice_cols(r.start, r.end))?;
        let q = stack.quantize(&z)?;
        for (layer, idx) in q.indices.iter().enumerate() {
            for &k in idx {
                counts[layer][k] += 1;
            }
        }
    }
    Ok(counts)
}
