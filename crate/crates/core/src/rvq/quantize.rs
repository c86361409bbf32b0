use rand::Rng;
use serde::Serialize;

use super::codebook::Codebook;
use crate::error::{Error, Result};
use crate::math::Tensor;

/// Latent sequence `[n, d]` at the encoder's reduced frame rate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatentSeq {
    pub data: Tensor,
    /// Set once the rows are sums of codebook entries.
    pub quantized: bool,
    /// Frames appended before encoding, stripped again on decode.
    pub pad: usize,
}

impl LatentSeq {
    pub fn raw(data: Tensor, pad: usize) -> Self {
        Self {
            data,
            quantized: false,
            pad,
        }
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizeResult {
    /// `[layers_used][n]` entry indices.
    pub indices: Vec<Vec<usize>>,
    /// Code chosen at each used layer, `[n, d]` each.
    pub per_layer_codes: Vec<Tensor>,
    /// What each used layer quantized: `z` for the first, then `z` minus the running code sum.
    pub layer_inputs: Vec<Tensor>,
    /// `z` minus the code sum through each used layer.
    pub residuals: Vec<Tensor>,
    pub code_sum: LatentSeq,
    pub layers_used: usize,
}

/// Quantizes `z` through the codebooks, each layer coding the previous remainder.
///
/// With `dropout = Some((p, rng))`, a draw below `p` truncates to a uniformly
/// random depth in `1..=Q`. Without it every layer is used and no randomness
/// is consumed.
pub fn quantize_residual<R: Rng + ?Sized>(
    z: &LatentSeq,
    codebooks: &[Codebook],
    dropout: Option<(f64, &mut R)>,
) -> Result<QuantizeResult> {
    if codebooks.is_empty() {
        return Err(Error::Empty("no codebooks".into()));
    }
    if z.quantized {
        return Err(Error::Config("latent is already quantized".into()));
    }
    for (q, cb) in codebooks.iter().enumerate() {
        if cb.size() == 0 {
            return Err(Error::Empty(format!("codebook {q}")));
        }
        if cb.dim() != z.dim() {
            return Err(Error::dim(format!("codebook {q} dim"), z.dim(), cb.dim()));
        }
    }
    let depth = codebooks.len();
    let layers_used = match dropout {
        Some((p, rng)) => {
            if rng.random::<f64>() < p {
                rng.random_range(1..=depth)
            } else {
                depth
            }
        }
        None => depth,
    };

    let (n, d) = (z.len(), z.dim());
    let mut residual = z.data.clone();
    let mut sum = Tensor::zeros(&[n, d]);
    let mut out = QuantizeResult {
        indices: Vec::with_capacity(layers_used),
        per_layer_codes: Vec::with_capacity(layers_used),
        layer_inputs: Vec::with_capacity(layers_used),
        residuals: Vec::with_capacity(layers_used),
        code_sum: LatentSeq::raw(Tensor::zeros(&[0, d]), z.pad),
        layers_used,
    };
    for cb in &codebooks[..layers_used] {
        let mut idx = Vec::with_capacity(n);
        let mut code = Tensor::zeros(&[n, d]);
        for t in 0..n {
            let k = cb.nearest(residual.row(t));
            idx.push(k);
            code.row_mut(t).copy_from_slice(cb.entries.row(k));
        }
        sum.add_assign(&code)?;
        let next = residual.sub(&code)?;
        out.layer_inputs.push(std::mem::replace(&mut residual, next));
        out.residuals.push(residual.clone());
        out.per_layer_codes.push(code);
        out.indices.push(idx);
    }
    out.code_sum = LatentSeq {
        data: sum,
        quantized: true,
        pad: z.pad,
    };
    Ok(out)
}

/// Mean absolute reconstruction error plus `beta` times the summed per-layer
/// mean squared distance between each layer's input and its (constant) code.
pub fn rvq_loss(motion: &Tensor, recon: &Tensor, quant: &QuantizeResult, beta: f64) -> Result<f64> {
    if !motion.same_shape(recon) {
        return Err(Error::dim("reconstruction", motion.len(), recon.len()));
    }
    let l1 = motion.data().iter().zip(recon.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / motion.len().max(1) as f64;
    Ok(l1 + beta * commitment(quant))
}

pub(crate) fn commitment(quant: &QuantizeResult) -> f64 {
    quant
        .layer_inputs
        .iter()
        .zip(&quant.per_layer_codes)
        .map(|(x, c)| x.data().iter().zip(c.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len().max(1) as f64)
        .sum()
}

/// Gradient with respect to the encoder output `z`.
///
/// The quantizer is the identity in the backward pass, so the decoder's input
/// gradient is copied onto `z`. Codes are constants; the commitment term
/// adds `2β/len · (input_q − code_q)` for every used layer.
pub fn latent_grad(code_grad: &Tensor, quant: &QuantizeResult, beta: f64) -> Result<Tensor> {
    let mut g = code_grad.clone();
    if beta != 0.0 {
        for (x, c) in quant.layer_inputs.iter().zip(&quant.per_layer_codes) {
            let scale = 2.0 * beta / x.len().max(1) as f64;
            g.axpy(scale, &x.sub(c)?)?;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type NoRng = ChaCha8Rng;

    fn cb(rows: &[Vec<f64>]) -> Codebook {
        Codebook::new(Tensor::from_rows(rows).unwrap(), 0.99).unwrap()
    }

    fn latent(rows: &[Vec<f64>]) -> LatentSeq {
        LatentSeq::raw(Tensor::from_rows(rows).unwrap(), 0)
    }

    #[test]
    fn hand_two_layer_case() {
        let books = [
            cb(&[vec![0.0, 0.0], vec![1.0, 1.0]]),
            cb(&[vec![-0.5, -0.5], vec![0.2, 0.2]]),
        ];
        let q = quantize_residual::<NoRng>(&latent(&[vec![0.6, 0.6]]), &books, None).unwrap();
        assert_eq!(q.indices, vec![vec![1], vec![0]]);
        let r1 = q.residuals[0].row(0);
        assert!((r1[0] + 0.4).abs() < 1e-12 && (r1[1] + 0.4).abs() < 1e-12);
        let s = q.code_sum.data.row(0);
        assert!((s[0] - 0.5).abs() < 1e-12 && (s[1] - 0.5).abs() < 1e-12);
        assert!(q.code_sum.quantized);
        assert_eq!(q.layers_used, 2);
    }

    #[test]
    fn exact_entry_gives_zero_residual() {
        let books = [cb(&[vec![0.3, 0.1], vec![-1.0, 2.0], vec![4.0, 4.0]])];
        let q = quantize_residual::<NoRng>(&latent(&[vec![-1.0, 2.0]]), &books, None).unwrap();
        assert_eq!(q.indices[0][0], 1);
        assert!(q.residuals[0].data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dropout_draws_depth_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let books: Vec<Codebook> = (0..4).map(|_| Codebook::new(Tensor::randn(&[8, 2], 1.0, &mut rng), 0.99).unwrap()).collect();
        let z = LatentSeq::raw(Tensor::randn(&[5, 2], 1.0, &mut rng), 0);
        let mut seen = [0usize; 5];
        for _ in 0..400 {
            let q = quantize_residual(&z, &books, Some((1.0, &mut rng))).unwrap();
            seen[q.layers_used] += 1;
            assert_eq!(q.per_layer_codes.len(), q.layers_used);
        }
        assert_eq!(seen[0], 0);
        assert!(seen[1..].iter().all(|&c| c > 50), "{seen:?}");
        let never = quantize_residual(&z, &books, Some((0.0, &mut rng))).unwrap();
        assert_eq!(never.layers_used, 4);
    }

    #[test]
    fn errors() {
        let z = latent(&[vec![0.0, 0.0]]);
        assert!(quantize_residual::<NoRng>(&z, &[], None).is_err());
        assert!(quantize_residual::<NoRng>(&z, &[cb(&[vec![1.0]])], None).is_err());
        let mut q = z.clone();
        q.quantized = true;
        assert!(quantize_residual::<NoRng>(&q, &[cb(&[vec![1.0, 1.0]])], None).is_err());
    }

    #[test]
    fn loss_hand_cases() {
        let books = [cb(&[vec![0.0]])];
        let z = latent(&[vec![0.5]]);
        let q = quantize_residual::<NoRng>(&z, &books, None).unwrap();
        let motion = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let recon = Tensor::from_rows(&[vec![1.0, 2.5], vec![3.0, 4.0]]).unwrap();
        assert!((rvq_loss(&motion, &recon, &q, 0.25).unwrap() - 0.1875).abs() < 1e-12);
        assert!((rvq_loss(&motion, &recon, &q, 0.0).unwrap() - 0.125).abs() < 1e-12);

        let exact = quantize_residual::<NoRng>(&latent(&[vec![0.0]]), &books, None).unwrap();
        assert_eq!(rvq_loss(&motion, &motion, &exact, 0.25).unwrap(), 0.0);
    }

    #[test]
    fn straight_through_without_commitment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let books = [Codebook::new(Tensor::randn(&[4, 3], 1.0, &mut rng), 0.99).unwrap()];
        let q = quantize_residual::<NoRng>(&LatentSeq::raw(Tensor::randn(&[6, 3], 1.0, &mut rng), 0), &books, None).unwrap();
        let g = Tensor::randn(&[6, 3], 1.0, &mut rng);
        assert_eq!(latent_grad(&g, &q, 0.0).unwrap(), g);
    }

    #[test]
    fn commitment_grad_matches_finite_difference() {
        // Codes held fixed: perturb z, recompute layer inputs with the same indices.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let books: Vec<Codebook> = (0..3).map(|_| Codebook::new(Tensor::randn(&[6, 2], 1.0, &mut rng), 0.99).unwrap()).collect();
        let z = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let q = quantize_residual::<NoRng>(&LatentSeq::raw(z.clone(), 0), &books, None).unwrap();
        let beta = 0.25;
        let fixed_loss = |zz: &Tensor| {
            let mut x = zz.clone();
            let mut total = 0.0;
            for c in &q.per_layer_codes {
                total += x.data().iter().zip(c.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
                x = x.sub(c).unwrap();
            }
            beta * total
        };
        let g = latent_grad(&Tensor::zeros(&[4, 2]), &q, beta).unwrap();
        let eps = 1e-6;
        for i in 0..z.len() {
            let mut p = z.clone();
            p.data_mut()[i] += eps;
            let mut m = z.clone();
            m.data_mut()[i] -= eps;
            let num = (fixed_loss(&p) - fixed_loss(&m)) / (2.0 * eps);
            assert!((num - g.data()[i]).abs() < 1e-7, "{num} vs {}", g.data()[i]);
        }
    }
}
