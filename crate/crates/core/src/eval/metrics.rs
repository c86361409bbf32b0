use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::cosine;
use crate::error::{Error, Result};
use crate::math::Tensor;

/// Diagonal jitter added to covariances before the matrix square roots.
pub const COV_JITTER: f64 = 1e-6;
/// Width of the Gaussian kernel in beat consistency, frames.
pub const BEAT_SIGMA: f64 = 3.0;
/// Moving-average window applied to frame speeds before locating minima.
pub const SPEED_SMOOTHING: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Generated,
}

/// `M x f` motion features from the frozen motion encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub rows: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl FeatureSet {
    pub fn new(rows: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        if let Some(f) = rows.first().map(Vec::len) {
            if rows.iter().any(|r| r.len() != f) {
                return Err(Error::Structure("feature rows of unequal width".into()));
            }
        }
        Ok(Self { rows, provenance })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn gaussian(&self) -> (DVector<f64>, DMatrix<f64>) {
        let (m, f) = (self.len(), self.width());
        let mean = DVector::from_fn(f, |c, _| self.rows.iter().map(|r| r[c]).sum::<f64>() / m as f64);
        let mut cov = DMatrix::zeros(f, f);
        for r in &self.rows {
            let d = DVector::from_fn(f, |c, _| r[c] - mean[c]);
            cov += &d * d.transpose();
        }
        cov /= (m.max(2) - 1) as f64;
        for i in 0..f {
            cov[(i, i)] += COV_JITTER;
        }
        (mean, cov)
    }
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn fgd(real: &FeatureSet, gen: &FeatureSet) -> Result<f64> {
    if real.len() < 2 || gen.len() < 2 {
        return Err(Error::Empty("fgd needs at least two features per set".into()));
    }
    if real.width() != gen.width() {
        return Err(Error::dim("fgd feature width", real.width(), gen.width()));
    }
    let (mr, cr) = real.gaussian();
    let (mg, cg) = gen.gaussian();
    let root = sym_sqrt(&cr);
    let inner = &root * &cg * &root;
    let eig = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let cross: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = (mr - mg).norm_squared() + cr.trace() + cg.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Per-frame speed `|x_{t+1} - x_t|`, smoothed by a centered moving average.
pub fn smoothed_speed(frames: &Tensor) -> Vec<f64> {
    let n = frames.rows();
    if n < 2 {
        return Vec::new();
    }
    let speed: Vec<f64> = (0..n - 1)
        .map(|t| frames.row(t + 1).iter().zip(frames.row(t)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .collect();
    let half = SPEED_SMOOTHING / 2;
    (0..speed.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(speed.len());
            speed[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Frames where the smoothed speed has a local minimum below its median.
pub fn kinematic_beats(frames: &Tensor) -> Vec<usize> {
    let s = smoothed_speed(frames);
    if s.len() < 3 {
        return Vec::new();
    }
    let mut sorted = s.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    (1..s.len() - 1)
        .filter(|&t| s[t] < s[t - 1] && s[t] <= s[t + 1] && s[t] < median)
        .collect()
}

/// Mean over audio beats of `exp(-d^2 / (2 sigma^2))`, `d` the distance to the
/// nearest kinematic beat.
pub fn beat_consistency(frames: &Tensor, audio_beats: &[usize]) -> Result<f64> {
    if audio_beats.is_empty() {
        return Err(Error::Empty("audio beats".into()));
    }
    Ok(beat_consistency_with(&kinematic_beats(frames), audio_beats))
}

pub fn beat_consistency_with(kinematic: &[usize], audio_beats: &[usize]) -> f64 {
    if kinematic.is_empty() || audio_beats.is_empty() {
        return 0.0;
    }
    let total: f64 = audio_beats
        .iter()
        .map(|&b| {
            let d = kinematic.iter().map(|&k| (b as f64 - k as f64).abs()).fold(f64::INFINITY, f64::min);
            (-d * d / (2.0 * BEAT_SIGMA * BEAT_SIGMA)).exp()
        })
        .sum();
    total / audio_beats.len() as f64
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean pairwise Euclidean distance.
pub fn diversity(feats: &FeatureSet) -> Result<f64> {
    let m = feats.len();
    if m < 2 {
        return Err(Error::Empty("diversity needs at least two features".into()));
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += dist(&feats.rows[i], &feats.rows[j]);
        }
    }
    Ok(total / (m * (m - 1) / 2) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RPrecision {
    pub top1: f64,
    pub top2: f64,
    pub top3: f64,
}

/// Retrieval accuracy of text queries against candidate motions.
///
/// Each repetition visits every pair as a query and draws `batch - 1`
/// distractor motions among the pairs `eligible(query, j)` admits. The true
/// motion's rank counts candidates with strictly higher cosine similarity.
pub fn r_precision<R: Rng + ?Sized>(
    text: &[Vec<f64>],
    motion: &[Vec<f64>],
    eligible: impl Fn(usize, usize) -> bool,
    batch: usize,
    repetitions: usize,
    rng: &mut R,
) -> Result<RPrecision> {
    let n = text.len();
    if motion.len() != n {
        return Err(Error::Length(format!("{n} text features for {} motions", motion.len())));
    }
    if n < batch || batch < 2 {
        return Err(Error::Empty(format!("{n} pairs for retrieval batches of {batch}")));
    }
    let mut hits = [0usize; 3];
    let mut queries = 0usize;
    for _ in 0..repetitions {
        for q in 0..n {
            let pool: Vec<usize> = (0..n).filter(|&j| j != q && eligible(q, j)).collect();
            if pool.len() < batch - 1 {
                return Err(Error::Empty(format!("query {q} has {} eligible distractors", pool.len())));
            }
            let truth = cosine(&text[q], &motion[q]);
            let rank = sample(rng, pool.len(), batch - 1)
                .into_iter()
                .filter(|&k| cosine(&text[q], &motion[pool[k]]) > truth)
                .count();
            for (k, h) in hits.iter_mut().enumerate() {
                if rank <= k {
                    *h += 1;
                }
            }
            queries += 1;
        }
    }
    let q = queries.max(1) as f64;
    Ok(RPrecision {
        top1: hits[0] as f64 / q,
        top2: hits[1] as f64 / q,
        top3: hits[2] as f64 / q,
    })
}

/// Mean Euclidean distance between matched text and motion features.
pub fn mm_dist(text: &[Vec<f64>], motion: &[Vec<f64>]) -> Result<f64> {
    if text.is_empty() || text.len() != motion.len() {
        return Err(Error::Empty("mm-dist needs matched, non-empty feature lists".into()));
    }
    Ok(text.iter().zip(motion).map(|(t, m)| dist(t, m)).sum::<f64>() / text.len() as f64)
}

/// Per query: is the matched distance below the mean distance to eligible mismatches?
pub fn matched_closer(text: &[Vec<f64>], motion: &[Vec<f64>], eligible: impl Fn(usize, usize) -> bool) -> Vec<bool> {
    (0..text.len())
        .map(|i| {
            let others: Vec<f64> = (0..motion.len())
                .filter(|&j| j != i && eligible(i, j))
                .map(|j| dist(&text[i], &motion[j]))
                .collect();
            if others.is_empty() {
                return false;
            }
            dist(&text[i], &motion[i]) < others.iter().sum::<f64>() / others.len() as f64
        })
        .collect()
}

/// Largest normalized cross-correlation over shifts `-max_lag..=max_lag` of
/// two `[N, C]` signals, each channel mean-removed first.
pub fn max_lag_xcorr(a: &Tensor, b: &Tensor, max_lag: usize) -> Result<f64> {
    if a.shape() != b.shape() || a.shape().len() != 2 || a.rows() < 2 {
        return Err(Error::dim("cross-correlation", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    let centre = |x: &Tensor| {
        let m = x.mean_rows();
        Tensor::from_fn(x.shape(), |k| x.data()[k] - m.data()[k % x.cols()])
    };
    let (a, b) = (centre(a), centre(b));
    let n = a.rows() as isize;
    let lag = (max_lag as isize).min(n - 2);
    let mut best = f64::NEG_INFINITY;
    for l in -lag..=lag {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for t in 0.max(-l)..n.min(n - l) {
            let (ra, rb) = (a.row(t as usize), b.row((t + l) as usize));
            for (x, y) in ra.iter().zip(rb) {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
        }
        let denom = (na * nb).sqrt();
        let r = if denom > 0.0 { dot / denom } else { 0.0 };
        best = best.max(r);
    }
    Ok(best)
}
