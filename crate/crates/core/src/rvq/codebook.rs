use rand::Rng;

use crate::error::{Error, Result};
use crate::math::Tensor;

/// Additive smoothing applied to cluster sizes before normalization.
const LAPLACE_EPS: f64 = 1e-5;

/// One quantization layer's code entries plus their EMA statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub entries: Tensor,
    pub ema_cluster_size: Vec<f64>,
    pub ema_embed_sum: Tensor,
    pub decay: f64,
}

impl Codebook {
    /// EMA state starts as if every entry had been assigned once to itself,
    /// so unused entries keep their value under decay.
    pub fn new(entries: Tensor, decay: f64) -> Result<Self> {
        if entries.shape().len() != 2 || entries.rows() == 0 || entries.cols() == 0 {
            return Err(Error::Empty(format!("codebook of shape {:?}", entries.shape())));
        }
        if !entries.is_finite() {
            return Err(Error::NonFinite("codebook entries".into()));
        }
        Ok(Self {
            ema_cluster_size: vec![1.0; entries.rows()],
            ema_embed_sum: entries.clone(),
            entries,
            decay,
        })
    }

    pub fn size(&self) -> usize {
        self.entries.rows()
    }

    pub fn dim(&self) -> usize {
        self.entries.cols()
    }

    /// Index of the closest entry by squared Euclidean distance; the lowest
    /// index wins ties.
    pub fn nearest(&self, v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.size() {
            let d: f64 = self.entries.row(k).iter().zip(v).map(|(c, x)| (c - x) * (c - x)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Exponential moving average update from `(entry index, assigned vector)` pairs.
    pub fn ema_update<'a>(&mut self, assignments: impl IntoIterator<Item = (usize, &'a [f64])>) {
        let (k, d) = (self.size(), self.dim());
        let mut counts = vec![0.0; k];
        let mut sums = Tensor::zeros(&[k, d]);
        for (idx, v) in assignments {
            counts[idx] += 1.0;
            for (s, x) in sums.row_mut(idx).iter_mut().zip(v) {
                *s += x;
            }
        }
        let decay = self.decay;
        for (c, n) in self.ema_cluster_size.iter_mut().zip(&counts) {
            *c = decay * *c + (1.0 - decay) * n;
        }
        for (e, s) in self.ema_embed_sum.data_mut().iter_mut().zip(sums.data()) {
            *e = decay * *e + (1.0 - decay) * s;
        }
        let total: f64 = self.ema_cluster_size.iter().sum();
        for i in 0..k {
            let smoothed = (self.ema_cluster_size[i] + LAPLACE_EPS) / (total + k as f64 * LAPLACE_EPS) * total;
            let denom = smoothed.max(LAPLACE_EPS);
            let sum = self.ema_embed_sum.row(i).to_vec();
            for (e, s) in self.entries.row_mut(i).iter_mut().zip(sum) {
                *e = s / denom;
            }
        }
    }

    /// Replaces every entry whose EMA usage fell below `threshold` with a
    /// random row of `batch`. Returns the number of entries replaced.
    pub fn reset_dead<R: Rng + ?Sized>(&mut self, batch: &Tensor, threshold: f64, rng: &mut R) -> Result<usize> {
        if batch.rows() == 0 {
            return Err(Error::Empty("codebook reset batch".into()));
        }
        if batch.cols() != self.dim() {
            return Err(Error::dim("codebook reset", self.dim(), batch.cols()));
        }
        let mut replaced = 0;
        for i in 0..self.size() {
            if self.ema_cluster_size[i] < threshold {
                let pick = rng.random_range(0..batch.rows());
                let v = batch.row(pick).to_vec();
                self.entries.row_mut(i).copy_from_slice(&v);
                self.ema_embed_sum.row_mut(i).copy_from_slice(&v);
                self.ema_cluster_size[i] = 1.0;
                replaced += 1;
            }
        }
        Ok(replaced)
    }
}
