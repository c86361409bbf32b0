use cospeech_core::diffusion::{ddpm_step, make_schedule, q_sample, NoiseSchedule, ScheduleKind};
use cospeech_core::math::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// 10k draws of a small latent; moments pooled over its elements.
#[test]
fn forward_moments_match_closed_form() {
    let s = make_schedule(ScheduleKind::Linear, 100).unwrap();
    let z0 = Tensor::randn(&[8, 12], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    for n in [1, 50, 100] {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let ab = s.alpha_bar(n);
        let sd = (1.0 - ab).sqrt();
        let (mut sum, mut sq) = (vec![0.0; z0.len()], vec![0.0; z0.len()]);
        let draws = 10_000;
        for _ in 0..draws {
            let zn = q_sample(&z0, n, &s, &mut rng).unwrap();
            for (k, v) in zn.data().iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        let d = draws as f64;
        let mut mean_err = 0.0;
        let mut var = 0.0;
        for k in 0..z0.len() {
            let m = sum[k] / d;
            mean_err += (m - ab.sqrt() * z0.data()[k]) / sd;
            var += (sq[k] - d * m * m) / (d - 1.0);
        }
        mean_err /= z0.len() as f64;
        var /= z0.len() as f64;
        assert!(mean_err.abs() < 0.02, "n={n}: mean offset {mean_err} noise scales");
        assert!((var - (1.0 - ab)).abs() / (1.0 - ab) < 0.02, "n={n}: var {var} vs {}", 1.0 - ab);
    }
}

#[test]
fn final_step_forgets_the_clean_latent() {
    let s = make_schedule(ScheduleKind::Linear, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z0 = Tensor::randn(&[10_000, 1], 1.0, &mut rng);
    let zn = q_sample(&z0, 100, &s, &mut rng).unwrap();
    let (ma, va) = moments(z0.data());
    let (mb, vb) = moments(zn.data());
    let cov = z0.data().iter().zip(zn.data()).map(|(a, b)| (a - ma) * (b - mb)).sum::<f64>() / 9_999.0;
    assert!((cov / (va * vb).sqrt()).abs() < 0.15);
}

/// Exact clean-sample posterior mean for a scalar Gaussian target.
fn posterior_clean(x: f64, n: usize, s: &NoiseSchedule, mean: f64, var: f64) -> f64 {
    let ab = s.alpha_bar(n);
    mean + var * ab.sqrt() / (ab * var + 1.0 - ab) * (x - ab.sqrt() * mean)
}

fn run_chain(steps: usize, mean: f64, var: f64, chains: usize) -> (f64, f64) {
    let s = make_schedule(ScheduleKind::Linear, steps).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(steps as u64);
    let mut z = Tensor::randn(&[chains, 1], 1.0, &mut rng);
    for n in (1..=steps).rev() {
        let x0 = z.map(|x| posterior_clean(x, n, &s, mean, var));
        z = ddpm_step(&z, &x0, n, &s, &mut rng).unwrap();
    }
    moments(z.data())
}

#[test]
fn chain_recovers_gaussian_target() {
    let (mean, var) = (1.5, 0.25);
    let (m, v) = run_chain(1000, mean, var, 10_000);
    assert!((m - mean).abs() / mean < 0.05, "mean {m}");
    assert!((v - var).abs() / var < 0.05, "var {v}");
}

/// With 100 coarse steps the sampler's fixed posterior variance omits the
/// spread of the clean estimate, so the chain comes out narrower.
#[test]
fn coarse_chain_keeps_mean_and_undershoots_variance() {
    let (mean, var) = (1.5, 0.25);
    let (m, v) = run_chain(100, mean, var, 10_000);
    assert!((m - mean).abs() / mean < 0.05, "mean {m}");
    assert!(v < var && v > 0.8 * var, "var {v}");
}
