//! End-to-end acceptance run: one pass/fail line per criterion.
//!
//! Everything runs inside a single test so the desk models are trained once
//! and shared by the criteria that need them.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use cospeech_cli::pipeline::{
    fit_codecs, fit_denoiser, fit_space, guidance_sweep, sign_test_p, speech_clips, synergy, test_motions, train_motions, Trained,
    SYNERGY_AUDIO_WEIGHT, SYNERGY_PROMPT_WEIGHT,
};
use cospeech_core::align::{AlignConfig, AlignSpace};
use cospeech_core::compose::{blend_conditions, combine, partwise_fuse, PartMask};
use cospeech_core::data::{build_corpus, BodyPart, Corpus, CorpusConfig, PromptTokens, Template, CLIP_FRAMES};
use cospeech_core::diffusion::{audio_network, ddpm_step, make_schedule, q_sample, standard_normal, trunk_network, Denoiser, DiffusionConfig, ScheduleKind};
use cospeech_core::eval::{matched_closer, mm_dist, r_precision};
use cospeech_core::math::{build, grad_check, input_grad_check, Activation, Conv1d, Dense, Layer, Network, Tensor};
use cospeech_core::persist::{seed, RunConfig};
use cospeech_core::rvq::{decoder_network, encoder_network, quantize_residual, relative_mse, train_rvq, Codebook, LatentSeq, RvqConfig, RvqTrainConfig};
use rand::{Rng, RngCore};

type Outcome = (bool, String);

struct Run {
    lines: Vec<String>,
    failed: Vec<usize>,
}

impl Run {
    fn criterion(&mut self, id: usize, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let line = format!(
            "criterion {id:>2} {} {name} ({:.1}s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        println!("{line}");
        if !pass {
            self.failed.push(id);
        }
        self.lines.push(line);
    }

    fn skip(&mut self, id: usize, name: &str, why: &str) {
        self.criterion(id, name, || (false, format!("not run: {why}")));
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

// ---------------------------------------------------------------- gradients

const GRAD_SEEDS: u64 = 20;
const GRAD_EPS: f64 = 1e-3;
const GRAD_TOL: f64 = 1e-4;

fn shrunk_align() -> AlignConfig {
    AlignConfig {
        dim: 3,
        text_hidden: 5,
        motion_hidden: 5,
        decoder_hidden: 4,
        frames: 4,
        ..AlignConfig::desk()
    }
}

fn shrunk_diffusion() -> DiffusionConfig {
    DiffusionConfig {
        code_dim: 2,
        audio_dim: 2,
        audio_width: 4,
        prompt_dim: 2,
        step_embed: 2,
        width: 6,
        context_kernel: 3,
        depth: 1,
        ..DiffusionConfig::desk()
    }
}

type Case = (&'static str, Box<dyn Fn(&mut dyn RngCore) -> (Network, Tensor)>);

fn gradient_cases() -> Vec<Case> {
    fn net(layers: Vec<Layer>) -> Network {
        Network::new(layers)
    }
    vec![
        ("dense", Box::new(|r| (net(vec![Layer::Dense(Dense::new(5, 4, 1.0, r))]), Tensor::randn(&[3, 5], 1.0, r)))),
        ("conv1d", Box::new(|r| (net(vec![Layer::Conv1d(Conv1d::same(3, 4, 3, 1.0, r))]), Tensor::randn(&[10, 3], 1.0, r)))),
        (
            "conv1d-strided",
            Box::new(|r| (net(vec![Layer::Conv1d(Conv1d::new(3, 4, 4, 2, 1, 1.0, r))]), Tensor::randn(&[12, 3], 1.0, r))),
        ),
        (
            "tanh",
            Box::new(|r| (net(vec![Layer::Dense(Dense::new(4, 4, 1.0, r)), Layer::Act(Activation::Tanh)]), Tensor::randn(&[3, 4], 1.0, r))),
        ),
        (
            "silu",
            Box::new(|r| (net(vec![Layer::Dense(Dense::new(4, 4, 1.0, r)), Layer::Act(Activation::Silu)]), Tensor::randn(&[3, 4], 1.0, r))),
        ),
        (
            "identity",
            Box::new(|r| (net(vec![Layer::Dense(Dense::new(4, 4, 1.0, r)), Layer::Act(Activation::Identity)]), Tensor::randn(&[3, 4], 1.0, r))),
        ),
        (
            "upsample",
            Box::new(|r| {
                let n = net(vec![Layer::Dense(Dense::new(3, 4, 1.0, r)), Layer::Upsample(2), Layer::Conv1d(Conv1d::same(4, 2, 3, 1.0, r))]);
                (n, Tensor::randn(&[5, 3], 1.0, r))
            }),
        ),
        (
            "residual",
            Box::new(|r| (net(vec![Layer::Residual(build::mlp(&[4, 6, 4], Activation::Tanh, r))]), Tensor::randn(&[3, 4], 1.0, r))),
        ),
        ("rvq-encoder", Box::new(|r| (encoder_network(6, 8, 4, r), Tensor::randn(&[16, 6], 1.0, r)))),
        ("rvq-decoder", Box::new(|r| (decoder_network(4, 8, 6, r), Tensor::randn(&[4, 4], 1.0, r)))),
        (
            "align-text",
            Box::new(|r| {
                let s = AlignSpace::new(shrunk_align(), r).unwrap();
                let x = Tensor::randn(&[1, s.text_encoder.layers().first().map_or(0, input_width)], 0.3, r);
                (s.text_encoder, x)
            }),
        ),
        (
            "align-motion",
            Box::new(|r| {
                let s = AlignSpace::new(shrunk_align(), r).unwrap();
                let x = Tensor::randn(&[1, s.motion_encoder.layers().first().map_or(0, input_width)], 1.0, r);
                (s.motion_encoder, x)
            }),
        ),
        (
            "align-decoder",
            Box::new(|r| {
                let s = AlignSpace::new(shrunk_align(), r).unwrap();
                (s.recon_decoder, Tensor::randn(&[1, 3], 1.0, r))
            }),
        ),
        (
            "denoiser-trunk",
            Box::new(|r| {
                let c = shrunk_diffusion();
                (trunk_network(&c, r), Tensor::randn(&[6, c.input_channels()], 1.0, r))
            }),
        ),
        (
            "audio-encoder",
            Box::new(|r| {
                let c = shrunk_diffusion();
                (audio_network(&c, r), Tensor::randn(&[16, 3], 1.0, r))
            }),
        ),
    ]
}

fn input_width(layer: &Layer) -> usize {
    match layer {
        Layer::Dense(d) => d.weight.rows(),
        _ => panic!("encoder starts with a dense layer"),
    }
}

/// Worst error per case at `eps`.
fn gradient_errors(eps: f64) -> Vec<(&'static str, f64)> {
    gradient_cases()
        .into_iter()
        .map(|(name, make)| {
            let worst = (0..GRAD_SEEDS)
                .map(|s| {
                    let mut rng = seed::stream_indexed(7, "acceptance-grad", &[s]);
                    let (net, x) = make(&mut rng);
                    grad_check(&net, &x, eps).unwrap().max(input_grad_check(&net, &x, eps).unwrap())
                })
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

fn criterion_gradients() -> Outcome {
    let worst = gradient_errors(GRAD_EPS);
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let failing: Vec<&str> = worst.iter().filter(|w| w.1 >= GRAD_TOL).map(|w| w.0).collect();
    // Truncation error of central differences scales with eps^2; a finer step
    // separates it from a wrong backward pass.
    let fine = gradient_errors(1e-5).iter().map(|w| w.1).fold(0.0, f64::max);
    (
        failing.is_empty(),
        format!(
            "{} networks x {GRAD_SEEDS} seeds, worst relative error {max:.2e} at eps {GRAD_EPS:e}; over {GRAD_TOL:e}: {failing:?}; worst at eps 1e-5: {fine:.2e}",
            worst.len()
        ),
    )
}

// ---------------------------------------------------------------- quantizer

fn criterion_quantizer() -> Outcome {
    let mut rng = seed::stream(7, "acceptance-quantize");
    let (mut mismatches, mut energy_violations) = (0, 0);
    let cases = 100;
    for _ in 0..cases {
        let d = rng.random_range(1..=6);
        let n = rng.random_range(1..=12);
        let layers = rng.random_range(1..=5);
        let size = rng.random_range(2..=16);
        let books: Vec<Codebook> = (0..layers)
            .map(|_| {
                let mut e = Tensor::randn(&[size, d], rng.random_range(0.1..2.0), &mut rng);
                // A zero entry lets every layer leave its residual unchanged.
                e.row_mut(0).fill(0.0);
                Codebook::new(e, 0.99).unwrap()
            })
            .collect();
        let z = Tensor::randn(&[n, d], 1.5, &mut rng);
        let q = quantize_residual::<seed::StreamRng>(&LatentSeq::raw(z.clone(), 0), &books, None).unwrap();

        let mut residual = z.clone();
        let mut energy = vec![residual.sq_norm()];
        for (l, book) in books.iter().enumerate() {
            for t in 0..n {
                let r = residual.row(t).to_vec();
                let best = (0..size)
                    .min_by(|&a, &b| sq_dist(&r, book.entries.row(a)).total_cmp(&sq_dist(&r, book.entries.row(b))))
                    .unwrap();
                if q.indices[l][t] != best {
                    mismatches += 1;
                }
                for (x, c) in residual.row_mut(t).iter_mut().zip(book.entries.row(best)) {
                    *x -= c;
                }
            }
            energy.push(residual.sq_norm());
        }
        let reported: Vec<f64> = std::iter::once(z.sq_norm()).chain(q.residuals.iter().map(|r| r.sq_norm())).collect();
        if reported.windows(2).any(|w| w[1] > w[0]) || energy.windows(2).any(|w| w[1] > w[0]) {
            energy_violations += 1;
        }
    }
    (
        mismatches == 0 && energy_violations == 0,
        format!("{cases} instances: {mismatches} index mismatches, {energy_violations} residual-energy increases"),
    )
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// ---------------------------------------------------------------- codecs

const Q_BUDGET_EPOCHS: usize = 6;

fn criterion_codecs(corpus: &Corpus, cfg: &RunConfig, stacks: &[cospeech_core::rvq::RvqStack; 3], seconds: f64) -> Outcome {
    let test = test_motions(corpus);
    let per_part: Vec<f64> = stacks.iter().map(|s| relative_mse(s, &test).unwrap()).collect();
    let held_ok = per_part.iter().all(|&m| m < 0.05) && seconds <= 300.0;

    let train = train_motions(corpus);
    let budget = RvqTrainConfig {
        epochs: Q_BUDGET_EPOCHS,
        ..cfg.rvq_train.clone()
    };
    let mut orderings = Vec::new();
    for s in 1..=3u64 {
        let score = |layers: usize| {
            let rvq = RvqConfig { layers, ..cfg.rvq.clone() };
            let (st, _) = train_rvq(&train, &rvq, &budget, s).unwrap();
            mean(&st.iter().map(|x| relative_mse(x, &test).unwrap()).collect::<Vec<_>>())
        };
        orderings.push((score(4), score(1)));
    }
    let ordered = orderings.iter().all(|(deep, flat)| deep < flat);
    (
        held_ok && ordered,
        format!(
            "held-out relative MSE upper/hands/lower {:.4}/{:.4}/{:.4} in {seconds:.0}s; Q=4 vs Q=1 at {Q_BUDGET_EPOCHS} epochs {}",
            per_part[0],
            per_part[1],
            per_part[2],
            orderings.iter().map(|(a, b)| format!("{a:.4}<{b:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

// ---------------------------------------------------------------- alignment

fn criterion_alignment(space: &AlignSpace, cfg: &RunConfig, seconds: f64) -> Outcome {
    let held = build_corpus(&CorpusConfig { s2m: 1, t2m: 140, ..cfg.corpus.clone() }, cfg.seed + 1000).unwrap();
    let eval: Vec<_> = held.clips.iter().filter(|c| c.prompt.is_some()).collect();
    let prompt = |i: usize| eval[i].prompt.as_ref().unwrap();
    let eligible = |i: usize, j: usize| prompt(i).similarity(prompt(j)) <= 0.8;
    let text: Vec<Vec<f64>> = (0..eval.len()).map(|i| space.encode_text(prompt(i)).unwrap().mu.into_data()).collect();
    let motion: Vec<Vec<f64>> = eval.iter().map(|c| space.encode_motion(&c.motion.frames).unwrap().mu.into_data()).collect();
    let r = r_precision(&text, &motion, eligible, 32, 20, &mut seed::stream(cfg.seed, "acceptance-retrieval")).unwrap();

    let mut rng = seed::stream(cfg.seed, "acceptance-null");
    let noise = |rng: &mut seed::StreamRng| -> Vec<Vec<f64>> {
        (0..eval.len()).map(|_| Tensor::randn(&[space.dim()], 1.0, rng).into_data()).collect()
    };
    let (nt, nm) = (noise(&mut rng), noise(&mut rng));
    let null = r_precision(&nt, &nm, eligible, 32, 20, &mut rng).unwrap();

    let closer = matched_closer(&text, &motion, eligible);
    let closer_rate = closer.iter().filter(|&&b| b).count() as f64 / closer.len() as f64;
    let pass = r.top1 >= 0.8 && (null.top1 - 1.0 / 32.0).abs() <= 0.03 && closer_rate >= 0.95 && seconds <= 300.0;
    (
        pass,
        format!(
            "top1 {:.3} (top3 {:.3}) on {} held-out pairs; null top1 {:.3}; matched closer {:.3}; mm-dist {:.3}; trained in {seconds:.0}s",
            r.top1,
            r.top3,
            eval.len(),
            null.top1,
            closer_rate,
            mm_dist(&text, &motion).unwrap()
        ),
    )
}

// ---------------------------------------------------------------- diffusion oracles

fn criterion_forward_moments() -> Outcome {
    let steps = 100;
    let s = make_schedule(ScheduleKind::Linear, steps).unwrap();
    let mut rng = seed::stream(7, "acceptance-forward");
    let z0 = Tensor::randn(&[4, 4], 1.0, &mut rng);
    let draws = 10_000;
    let mut details = Vec::new();
    let mut pass = true;
    for n in [1, steps / 2, steps] {
        let ab = s.alpha_bar(n);
        let sd = (1.0 - ab).sqrt();
        let (mut sum, mut sq) = (vec![0.0; z0.len()], vec![0.0; z0.len()]);
        for _ in 0..draws {
            let zn = q_sample(&z0, n, &s, &mut rng).unwrap();
            for (k, v) in zn.data().iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        let d = draws as f64;
        let mut mean_sq_err = 0.0;
        let mut var = 0.0;
        for k in 0..z0.len() {
            let m = sum[k] / d;
            mean_sq_err += ((m - ab.sqrt() * z0.data()[k]) / sd).powi(2);
            var += (sq[k] - d * m * m) / (d - 1.0);
        }
        let mean_err = (mean_sq_err / z0.len() as f64).sqrt();
        let var_err = (var / z0.len() as f64 - (1.0 - ab)).abs() / (1.0 - ab);
        pass &= mean_err < 0.02 && var_err < 0.02;
        details.push(format!("n={n}: mean rms {mean_err:.4} sd, var {:.2}%", 100.0 * var_err));
    }
    (pass, details.join("; "))
}

fn criterion_sampler_oracle() -> Outcome {
    let (target_mean, target_var) = (1.5, 0.25);
    let steps = 1000;
    let s = make_schedule(ScheduleKind::Linear, steps).unwrap();
    let mut rng = seed::stream(7, "acceptance-sampler");
    let mut z = Tensor::randn(&[10_000, 1], 1.0, &mut rng);
    for n in (1..=steps).rev() {
        let ab = s.alpha_bar(n);
        let gain = target_var * ab.sqrt() / (ab * target_var + 1.0 - ab);
        let x0 = z.map(|x| target_mean + gain * (x - ab.sqrt() * target_mean));
        z = ddpm_step(&z, &x0, n, &s, &mut rng).unwrap();
    }
    let m = mean(z.data());
    let v = z.data().iter().map(|x| (x - m).powi(2)).sum::<f64>() / (z.len() - 1) as f64;
    let (me, ve) = ((m - target_mean).abs() / target_mean, (v - target_var).abs() / target_var);
    (me < 0.05 && ve < 0.05, format!("N={steps}, 10k chains: mean {m:.4} ({:.2}%), var {v:.4} ({:.2}%)", 100.0 * me, 100.0 * ve))
}

fn same_bits(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn criterion_blend_identities(trained: &Trained, corpus: &Corpus) -> Outcome {
    let model = &trained.model;
    let clip = speech_clips(corpus).unwrap()[0];
    let audio = model.encode_audio(clip.audio.as_ref(), CLIP_FRAMES).unwrap();
    let prompt = trained.space.encode_text(&PromptTokens::from_templates(&[Template::Walk])).unwrap().mu;
    let zero_audio = Tensor::zeros(audio.shape());
    let zero_prompt = Tensor::zeros(prompt.shape());
    let mut rng = seed::stream(7, "acceptance-chain");
    let mut z = standard_normal(&[audio.rows(), model.latent_channels()], &mut rng);
    let mut violations = 0;
    let steps = model.config.steps;
    for n in (1..=steps).rev() {
        let u = model.denoise(&z, n, &zero_audio, &zero_prompt).unwrap();
        let a = model.denoise(&z, n, &audio, &zero_prompt).unwrap();
        let p = model.denoise(&z, n, &zero_audio, &prompt).unwrap();
        let ok = same_bits(&combine(&u, &a, &p, 0.0, 0.0).unwrap(), &u)
            && same_bits(&combine(&u, &a, &p, 1.0, 0.0).unwrap(), &a)
            && same_bits(&blend_conditions(model, &z, n, &audio, &prompt, 0.0, 0.0).unwrap(), &u)
            && same_bits(&blend_conditions(model, &z, n, &audio, &prompt, 1.0, 0.0).unwrap(), &a);
        if !ok {
            violations += 1;
        }
        let est = combine(&u, &a, &p, 1.0, 1.5).unwrap();
        z = ddpm_step(&z, &est, n, &model.schedule, &mut rng).unwrap();
    }
    (violations == 0, format!("{steps} chain steps, {violations} with a non-identical blend"))
}

fn criterion_fusion() -> Outcome {
    let mut rng = seed::stream(7, "acceptance-fusion");
    let cases = 100;
    let (mut wrong, mut accepted_bad) = (0, 0);
    for _ in 0..cases {
        let channels = rng.random_range(3..=24);
        let rows = rng.random_range(1..=6);
        let owner: Vec<usize> = (0..channels).map(|_| rng.random_range(0..3)).collect();
        let masks: Vec<PartMask> = BodyPart::ALL
            .iter()
            .enumerate()
            .map(|(i, &part)| PartMask {
                part,
                mask: owner.iter().map(|&o| o == i).collect(),
            })
            .collect();
        let estimates: BTreeMap<BodyPart, Tensor> = BodyPart::ALL.iter().map(|&p| (p, Tensor::randn(&[rows, channels], 1.0, &mut rng))).collect();
        let fused = partwise_fuse(&estimates, &masks).unwrap();
        for t in 0..rows {
            for c in 0..channels {
                let src = &estimates[&BodyPart::ALL[owner[c]]];
                if fused.at(t, c).to_bits() != src.at(t, c).to_bits() {
                    wrong += 1;
                }
            }
        }
        // Break the partition: one channel gets a second owner or loses its owner.
        let mut bad = masks.clone();
        let c = rng.random_range(0..channels);
        if rng.random_bool(0.5) {
            let other = (owner[c] + rng.random_range(1..3)) % 3;
            bad[other].mask[c] = true;
        } else {
            bad[owner[c]].mask[c] = false;
        }
        if partwise_fuse(&estimates, &bad).is_ok() {
            accepted_bad += 1;
        }
    }
    (
        wrong == 0 && accepted_bad == 0,
        format!("{cases} cases: {wrong} channel mismatches, {accepted_bad} non-partitions accepted"),
    )
}

// ---------------------------------------------------------------- acceptance

#[test]
fn acceptance() {
    let mut run = Run {
        lines: Vec::new(),
        failed: Vec::new(),
    };
    let cfg = RunConfig::desk();

    run.criterion(1, "gradient suite", criterion_gradients);
    run.criterion(2, "quantizer oracle", criterion_quantizer);

    let pipeline_start = Instant::now();
    let corpus = build_corpus(&cfg.corpus, cfg.seed).expect("desk corpus");
    let codecs_start = Instant::now();
    let codecs = fit_codecs(&corpus, &cfg);
    let codec_seconds = codecs_start.elapsed().as_secs_f64();
    let stacks = match codecs {
        Ok((stacks, _)) => Some(stacks),
        Err(e) => {
            println!("codec training failed: {e}");
            None
        }
    };
    let mut pipeline_seconds = pipeline_start.elapsed().as_secs_f64();
    match &stacks {
        Some(s) => run.criterion(3, "residual codecs", || criterion_codecs(&corpus, &cfg, s, codec_seconds)),
        None => run.skip(3, "residual codecs", "training failed"),
    }

    let align_start = Instant::now();
    let space = fit_space(&corpus, &cfg).map(|(s, _)| s);
    let align_seconds = align_start.elapsed().as_secs_f64();
    pipeline_seconds += align_seconds;
    match &space {
        Ok(s) => run.criterion(4, "alignment space", || criterion_alignment(s, &cfg, align_seconds)),
        Err(e) => run.skip(4, "alignment space", &e.to_string()),
    }

    run.criterion(5, "forward process moments", criterion_forward_moments);
    run.criterion(6, "sampler oracle", criterion_sampler_oracle);

    let trained = match (stacks, space) {
        (Some(stacks), Ok(space)) => {
            let start = Instant::now();
            let fitted = fit_denoiser(&corpus, &stacks, &space, &cfg);
            pipeline_seconds += start.elapsed().as_secs_f64();
            match fitted {
                Ok((model, _)) => Some(Trained { stacks, space, model }),
                Err(e) => {
                    println!("denoiser training failed: {e}");
                    None
                }
            }
        }
        _ => None,
    };

    match &trained {
        Some(t) => run.criterion(7, "blend identities", || criterion_blend_identities(t, &corpus)),
        None => run.skip(7, "blend identities", "no trained denoiser"),
    }
    run.criterion(8, "part-wise fusion", criterion_fusion);

    let sweep_seeds: Vec<u64> = (1..=20).collect();
    let mut baseline_w2: Option<Vec<f64>> = None;
    match &trained {
        Some(t) => {
            run.criterion(9, "audio and prompt synergy", || {
                let start = Instant::now();
                let clips = speech_clips(&corpus).unwrap();
                let seeds: Vec<u64> = (1..=10).collect();
                let r = synergy(t, &clips, &cfg.corpus.text, SYNERGY_AUDIO_WEIGHT, SYNERGY_PROMPT_WEIGHT, &seeds).unwrap();
                let total = pipeline_seconds + start.elapsed().as_secs_f64();
                let pass = r.walk_xcorr() >= 0.5 && r.bc_ratio() >= 1.2 && total < 1800.0;
                (
                    pass,
                    format!(
                        "walk xcorr {:.3}; BC {:.3} vs prompt-only {:.3} (ratio {:.3}); pipeline {total:.0}s",
                        r.walk_xcorr(),
                        r.bc_combined(),
                        r.bc_prompt_only(),
                        r.bc_ratio()
                    ),
                )
            });
            run.criterion(10, "prompt guidance monotonicity", || {
                let trials = guidance_sweep(t, &[0.0, 2.0], &sweep_seeds).unwrap();
                let at0: Vec<f64> = trials.iter().map(|x| x.cosines[0]).collect();
                let at2: Vec<f64> = trials.iter().map(|x| x.cosines[1]).collect();
                let wins = trials.iter().filter(|x| x.cosines[1] > x.cosines[0]).count();
                let p = sign_test_p(wins, trials.len());
                let pass = mean(&at2) > mean(&at0) && p < 0.05;
                let detail = format!("mean cosine {:.3} -> {:.3}; {wins}/{} seeds improve, p = {p:.2e}", mean(&at0), mean(&at2), trials.len());
                baseline_w2 = Some(at2);
                (pass, detail)
            });
        }
        None => {
            run.skip(9, "audio and prompt synergy", "no trained denoiser");
            run.skip(10, "prompt guidance monotonicity", "no trained denoiser");
        }
    }

    match (&trained, &baseline_w2) {
        (Some(t), Some(implicit)) => run.criterion(11, "implicit-label ablation", || {
            let mut text_cfg = cfg.clone();
            text_cfg.diffusion_train.text_fraction = 1.0;
            let (model, _) = fit_denoiser(&corpus, &t.stacks, &t.space, &text_cfg).unwrap();
            let ablated = Trained {
                stacks: t.stacks.clone(),
                space: t.space.clone(),
                model,
            };
            let text_only: Vec<f64> = guidance_sweep(&ablated, &[2.0], &sweep_seeds).unwrap().iter().map(|x| x.cosines[0]).collect();
            let (a, b) = (mean(&text_only), mean(implicit));
            (a < b, format!("cosine at w_p=2: text features only {a:.4} vs implicit labels {b:.4}"))
        }),
        _ => run.skip(11, "implicit-label ablation", "criterion 10 did not produce a baseline"),
    }

    run.criterion(12, "determinism", || {
        let cfg = common::tiny_config();
        let threads = [1usize, 1, 4];
        let outputs: Vec<Vec<u8>> = threads
            .iter()
            .map(|&n| {
                let dir = tempfile::tempdir().unwrap();
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
                pool.install(|| common::scripted_pipeline(dir.path(), &cfg))
            })
            .collect();
        let same = outputs.windows(2).all(|w| w[0] == w[1]);
        (
            same && !outputs[0].is_empty(),
            format!("scripted pipeline with {threads:?} threads: {} metric CSV bytes, identical = {same}", outputs[0].len()),
        )
    });

    println!("\nacceptance summary");
    for line in &run.lines {
        println!("{line}");
    }
    assert!(run.failed.is_empty(), "failed criteria: {:?}", run.failed);
}
