use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::space::{motion_features, text_features, AlignSpace};
use crate::data::PromptTokens;
use crate::error::{Error, Result};
use crate::math::gauss::{LOGVAR_MAX, LOGVAR_MIN};
use crate::math::{accumulate, smooth_l1, zero_grads, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignLosses {
    pub recon: f64,
    pub kl: f64,
    pub embed: f64,
    pub nce: f64,
    pub total: f64,
}

/// Parameter gradients in each network's `named_params` order.
#[derive(Clone, Debug)]
pub struct AlignGrads {
    pub text: Vec<Tensor>,
    pub motion: Vec<Tensor>,
    pub decoder: Vec<Tensor>,
}

/// Standard-normal draws used to sample the text and motion latents of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairNoise {
    pub text: Vec<f64>,
    pub motion: Vec<f64>,
}

impl PairNoise {
    pub fn draw<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut g = || (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self {
            text: g(),
            motion: g(),
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            text: vec![0.0; dim],
            motion: vec![0.0; dim],
        }
    }
}

/// `KL(N(mu_p, e^lv_p) || N(mu_q, e^lv_q))` for diagonal Gaussians.
pub fn kl_diag(mu_p: &[f64], lv_p: &[f64], mu_q: &[f64], lv_q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..mu_p.len() {
        let d = mu_p[i] - mu_q[i];
        kl += lv_q[i] - lv_p[i] + (lv_p[i].exp() + d * d) / lv_q[i].exp() - 1.0;
    }
    0.5 * kl
}

/// Adds `scale * d KL / d (mu_p, lv_p, mu_q, lv_q)` into the given buffers.
fn kl_grad(
    (mu_p, lv_p, mu_q, lv_q): (&[f64], &[f64], &[f64], &[f64]),
    scale: f64,
    g_mu_p: &mut [f64],
    g_lv_p: &mut [f64],
    mut g_q: Option<(&mut [f64], &mut [f64])>,
) {
    for i in 0..mu_p.len() {
        let d = mu_p[i] - mu_q[i];
        let vq = lv_q[i].exp();
        let vp = lv_p[i].exp();
        g_mu_p[i] += scale * d / vq;
        g_lv_p[i] += scale * 0.5 * (vp / vq - 1.0);
        if let Some((g_mu_q, g_lv_q)) = g_q.as_mut() {
            g_mu_q[i] -= scale * d / vq;
            g_lv_q[i] += scale * 0.5 * (1.0 - (vp + d * d) / vq);
        }
    }
}

/// Symmetric InfoNCE over the cosine similarity matrix `S_ij = cos(t_i, m_j) / tau`.
///
/// `allowed[i][j]` says whether pair `(i, j)` may act as a negative; the
/// diagonal is always kept. Returns the loss (mean of both directions) and
/// its gradients with respect to every `t_i` and `m_j`.
pub fn info_nce(text: &[Vec<f64>], motion: &[Vec<f64>], allowed: &[Vec<bool>], tau: f64) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let b = text.len();
    if b < 2 || motion.len() != b || allowed.len() != b {
        return Err(Error::Length(format!("contrastive term needs a batch of at least 2 pairs, got {b}")));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nt: Vec<f64> = text.iter().map(|v| norm(v)).collect();
    let nm: Vec<f64> = motion.iter().map(|v| norm(v)).collect();
    let mut cos = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in 0..b {
            let dot: f64 = text[i].iter().zip(&motion[j]).map(|(x, y)| x * y).sum();
            cos[i][j] = dot / (nt[i] * nm[j]);
        }
    }
    let keep = |i: usize, j: usize| i == j || allowed[i][j];
    // dL/dS accumulated from both directions.
    let mut g_s = vec![vec![0.0; b]; b];
    let mut loss = 0.0;
    let half = 0.5 / b as f64;
    for i in 0..b {
        let row: Vec<(usize, f64)> = (0..b).filter(|&j| keep(i, j)).map(|j| (j, cos[i][j] / tau)).collect();
        let (lse, probs) = log_softmax(&row);
        loss += half * (lse - cos[i][i] / tau);
        for (j, p) in probs {
            g_s[i][j] += half * p;
        }
        g_s[i][i] -= half;
    }
    for j in 0..b {
        let col: Vec<(usize, f64)> = (0..b).filter(|&i| keep(i, j)).map(|i| (i, cos[i][j] / tau)).collect();
        let (lse, probs) = log_softmax(&col);
        loss += half * (lse - cos[j][j] / tau);
        for (i, p) in probs {
            g_s[i][j] += half * p;
        }
        g_s[j][j] -= half;
    }
    let dim = text[0].len();
    let mut g_t = vec![vec![0.0; dim]; b];
    let mut g_m = vec![vec![0.0; dim]; b];
    for i in 0..b {
        for j in 0..b {
            let g = g_s[i][j] / tau;
            if g == 0.0 {
                continue;
            }
            let c = cos[i][j];
            for k in 0..dim {
                let (t, m) = (text[i][k], motion[j][k]);
                g_t[i][k] += g * (m / (nt[i] * nm[j]) - c * t / (nt[i] * nt[i]));
                g_m[j][k] += g * (t / (nt[i] * nm[j]) - c * m / (nm[j] * nm[j]));
            }
        }
    }
    Ok((loss, g_t, g_m))
}

fn log_softmax(items: &[(usize, f64)]) -> (f64, Vec<(usize, f64)>) {
    let max = items.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = items.iter().map(|x| (x.1 - max).exp()).sum();
    let lse = max + sum.ln();
    (lse, items.iter().map(|&(j, s)| (j, (s - lse).exp())).collect())
}

/// Negatives are pairs whose prompts overlap by at most the threshold.
pub fn negative_mask(prompts: &[&PromptTokens], threshold: f64) -> Vec<Vec<bool>> {
    prompts
        .iter()
        .map(|a| prompts.iter().map(|b| a.similarity(b) <= threshold).collect())
        .collect()
}

struct Head {
    mu: Vec<f64>,
    lv: Vec<f64>,
    /// Whether the raw log-variance sat inside the clamp range (gradient passes).
    lv_live: Vec<bool>,
    z: Vec<f64>,
}

fn head(out: &Tensor, noise: &[f64]) -> Head {
    let dim = noise.len();
    let raw = &out.data()[dim..];
    let mu = out.data()[..dim].to_vec();
    let lv: Vec<f64> = raw.iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
    let lv_live = raw.iter().map(|v| (LOGVAR_MIN..=LOGVAR_MAX).contains(v)).collect();
    let z = (0..dim).map(|k| mu[k] + (0.5 * lv[k]).exp() * noise[k]).collect();
    Head { mu, lv, lv_live, z }
}

/// Head gradient `[g_mu | g_lv]` given gradients on mu, lv and the sampled z.
fn head_grad(h: &Head, noise: &[f64], g_mu: &[f64], g_lv: &[f64], g_z: &[f64]) -> Tensor {
    let dim = noise.len();
    let mut out = vec![0.0; 2 * dim];
    for k in 0..dim {
        out[k] = g_mu[k] + g_z[k];
        let sigma = (0.5 * h.lv[k]).exp();
        out[dim + k] = if h.lv_live[k] { g_lv[k] + g_z[k] * 0.5 * sigma * noise[k] } else { 0.0 };
    }
    Tensor::new(vec![1, 2 * dim], out).expect("head width")
}

/// All four alignment losses and their gradients with explicit sampling noise.
pub fn losses_and_grads(
    space: &AlignSpace,
    batch: &[(&PromptTokens, &Tensor)],
    noise: &[PairNoise],
) -> Result<(AlignLosses, AlignGrads)> {
    let cfg = &space.config;
    let b = batch.len();
    if b < 2 {
        return Err(Error::Length(format!("contrastive term needs a batch of at least 2 pairs, got {b}")));
    }
    if noise.len() != b {
        return Err(Error::Length(format!("{} noise draws for {b} pairs", noise.len())));
    }
    let dim = cfg.dim;
    let inv_b = 1.0 / b as f64;

    struct Item {
        t_acts: Vec<Tensor>,
        m_acts: Vec<Tensor>,
        t: Head,
        m: Head,
    }
    let items: Vec<Item> = batch
        .par_iter()
        .zip(noise)
        .map(|(&(tokens, frames), n)| {
            let t_acts = space.text_encoder.forward(&text_features(tokens))?;
            let m_acts = space.motion_encoder.forward(&space.motion_norm.apply(&motion_features(frames)?))?;
            let t = head(t_acts.last().expect("output"), &n.text);
            let m = head(m_acts.last().expect("output"), &n.motion);
            Ok(Item { t_acts, m_acts, t, m })
        })
        .collect::<Result<_>>()?;

    let prompts: Vec<&PromptTokens> = batch.iter().map(|p| p.0).collect();
    let mask = negative_mask(&prompts, cfg.filter_threshold);
    let zt: Vec<Vec<f64>> = items.iter().map(|it| it.t.z.clone()).collect();
    let zm: Vec<Vec<f64>> = items.iter().map(|it| it.m.z.clone()).collect();
    let (nce, g_nce_t, g_nce_m) = info_nce(&zt, &zm, &mask, cfg.temperature)?;

    struct ItemOut {
        recon: f64,
        kl: f64,
        embed: f64,
        text: Vec<Tensor>,
        motion: Vec<Tensor>,
        decoder: Vec<Tensor>,
    }
    let outs: Vec<ItemOut> = items
        .par_iter()
        .enumerate()
        .map(|(i, it)| {
            let frames = batch[i].1;
            let target = frames.clone().reshape(vec![1, frames.len()])?;
            let mut decoder = zero_grads(&space.recon_decoder);
            let mut recon = 0.0;
            let mut g_zt = vec![0.0; dim];
            let mut g_zm = vec![0.0; dim];
            for (z, g_z) in [(&it.m.z, &mut g_zm), (&it.t.z, &mut g_zt)] {
                let acts = space.recon_decoder.forward(&Tensor::new(vec![1, dim], z.clone())?)?;
                let (l, g) = smooth_l1(&target, acts.last().expect("output"))?;
                recon += l;
                let (pg, gz) = space.recon_decoder.backward(&acts, &g.scale(inv_b))?;
                accumulate(&mut decoder, &pg)?;
                g_z.iter_mut().zip(gz.data()).for_each(|(a, b)| *a += b);
            }

            let (t, m) = (&it.t, &it.m);
            let zero = vec![0.0; dim];
            let kl = kl_diag(&t.mu, &t.lv, &m.mu, &m.lv)
                + kl_diag(&m.mu, &m.lv, &t.mu, &t.lv)
                + kl_diag(&t.mu, &t.lv, &zero, &zero)
                + kl_diag(&m.mu, &m.lv, &zero, &zero);
            let (mut g_mu_t, mut g_lv_t) = (vec![0.0; dim], vec![0.0; dim]);
            let (mut g_mu_m, mut g_lv_m) = (vec![0.0; dim], vec![0.0; dim]);
            let s = cfg.lambda_kl * inv_b;
            kl_grad((&t.mu, &t.lv, &m.mu, &m.lv), s, &mut g_mu_t, &mut g_lv_t, Some((&mut g_mu_m, &mut g_lv_m)));
            kl_grad((&m.mu, &m.lv, &t.mu, &t.lv), s, &mut g_mu_m, &mut g_lv_m, Some((&mut g_mu_t, &mut g_lv_t)));
            kl_grad((&t.mu, &t.lv, &zero, &zero), s, &mut g_mu_t, &mut g_lv_t, None);
            kl_grad((&m.mu, &m.lv, &zero, &zero), s, &mut g_mu_m, &mut g_lv_m, None);

            let zt_t = Tensor::new(vec![dim], t.z.clone())?;
            let zm_t = Tensor::new(vec![dim], m.z.clone())?;
            let (embed, g_e) = smooth_l1(&zm_t, &zt_t)?;
            let se = cfg.lambda_e * inv_b;
            let sn = cfg.lambda_nce;
            for k in 0..dim {
                g_zt[k] += se * g_e.data()[k] + sn * g_nce_t[i][k];
                g_zm[k] += -se * g_e.data()[k] + sn * g_nce_m[i][k];
            }

            let gt = head_grad(t, &noise[i].text, &g_mu_t, &g_lv_t, &g_zt);
            let gm = head_grad(m, &noise[i].motion, &g_mu_m, &g_lv_m, &g_zm);
            let (text, _) = space.text_encoder.backward(&it.t_acts, &gt)?;
            let (motion, _) = space.motion_encoder.backward(&it.m_acts, &gm)?;
            Ok(ItemOut {
                recon,
                kl,
                embed,
                text,
                motion,
                decoder,
            })
        })
        .collect::<Result<_>>()?;

    let mut grads = AlignGrads {
        text: zero_grads(&space.text_encoder),
        motion: zero_grads(&space.motion_encoder),
        decoder: zero_grads(&space.recon_decoder),
    };
    let mut losses = AlignLosses {
        nce,
        ..AlignLosses::default()
    };
    for o in &outs {
        losses.recon += o.recon * inv_b;
        losses.kl += o.kl * inv_b;
        losses.embed += o.embed * inv_b;
        accumulate(&mut grads.text, &o.text)?;
        accumulate(&mut grads.motion, &o.motion)?;
        accumulate(&mut grads.decoder, &o.decoder)?;
    }
    losses.total = losses.recon + cfg.lambda_kl * losses.kl + cfg.lambda_e * losses.embed + cfg.lambda_nce * losses.nce;
    if !losses.total.is_finite() {
        return Err(Error::NonFinite("alignment loss".into()));
    }
    Ok((losses, grads))
}

/// Loss values for a batch, sampling latents from `rng`.
pub fn align_losses<R: Rng + ?Sized>(space: &AlignSpace, batch: &[(&PromptTokens, &Tensor)], rng: &mut R) -> Result<AlignLosses> {
    let noise: Vec<PairNoise> = (0..batch.len()).map(|_| PairNoise::draw(space.dim(), rng)).collect();
    Ok(losses_and_grads(space, batch, &noise)?.0)
}
