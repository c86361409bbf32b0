use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Pointwise nonlinearity. All variants are smooth so finite-difference
/// checks stay meaningful.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    Silu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    /// Derivative given the pre-activation `x` and post-activation `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

/// Fully connected map applied to every row: `y = x·W + b`, `W` is `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        Self {
            weight: Tensor::randn(&[inputs, outputs], gain / (inputs as f64).sqrt(), rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Temporal convolution over `[time, channels]` with zero padding.
///
/// The kernel is stored flattened as `[kernel * in, out]` so the forward pass
/// is a single matrix product over unfolded windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = (kernel * in_channels) as f64;
        Self {
            weight: Tensor::randn(&[kernel * in_channels, out_channels], gain / fan_in.sqrt(), rng),
            bias: Tensor::zeros(&[out_channels]),
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        }
    }

    /// "Same" length convolution for odd kernels.
    pub fn same<R: Rng + ?Sized>(inputs: usize, outputs: usize, kernel: usize, gain: f64, rng: &mut R) -> Self {
        Self::new(inputs, outputs, kernel, 1, kernel / 2, gain, rng)
    }

    pub fn output_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        if padded < self.kernel {
            None
        } else {
            Some((padded - self.kernel) / self.stride + 1)
        }
    }

    fn unfold(&self, x: &Tensor, out_len: usize) -> Vec<f64> {
        let cin = self.in_channels;
        let width = self.kernel * cin;
        let len = x.rows();
        let mut cols = vec![0.0; out_len * width];
        for t in 0..out_len {
            let row = &mut cols[t * width..(t + 1) * width];
            for j in 0..self.kernel {
                let src = (t * self.stride + j) as isize - self.padding as isize;
                if src >= 0 && (src as usize) < len {
                    row[j * cin..(j + 1) * cin].copy_from_slice(x.row(src as usize));
                }
            }
        }
        cols
    }

    fn fold(&self, cols: &[f64], out_len: usize, len: usize) -> Tensor {
        let cin = self.in_channels;
        let width = self.kernel * cin;
        let mut gx = Tensor::zeros(&[len, cin]);
        for t in 0..out_len {
            let row = &cols[t * width..(t + 1) * width];
            for j in 0..self.kernel {
                let src = (t * self.stride + j) as isize - self.padding as isize;
                if src >= 0 && (src as usize) < len {
                    for (g, v) in gx.row_mut(src as usize).iter_mut().zip(&row[j * cin..(j + 1) * cin]) {
                        *g += v;
                    }
                }
            }
        }
        gx
    }
}

/// One entry in a [`Network`].
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv1d(Conv1d),
    Act(Activation),
    /// Nearest-neighbour temporal upsampling by an integer factor.
    Upsample(usize),
    /// `y = x + inner(x)`.
    Residual(Network),
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv1d(_) => "conv1d",
            Layer::Act(_) => "activation",
            Layer::Upsample(_) => "upsample",
            Layer::Residual(_) => "residual",
        }
    }

    fn forward(&self, x: &Tensor, index: usize) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => {
                if x.cols() != d.inputs() || x.shape().len() > 2 {
                    return Err(Error::dim(
                        format!("layer {index} (dense)"),
                        format!("{} input columns", d.inputs()),
                        format!("shape {:?}", x.shape()),
                    ));
                }
                let (m, n) = (x.rows(), d.outputs());
                let mut out = Vec::with_capacity(m * n);
                for _ in 0..m {
                    out.extend_from_slice(d.bias.data());
                }
                gemm(m, d.inputs(), n, x.data(), false, d.weight.data(), false, 1.0, &mut out);
                Tensor::new(vec![m, n], out)
            }
            Layer::Conv1d(c) => {
                let out_len = match c.output_len(x.rows()) {
                    Some(l) if x.cols() == c.in_channels && x.shape().len() == 2 => l,
                    _ => {
                        return Err(Error::dim(
                            format!("layer {index} (conv1d)"),
                            format!("[time >= {}, {}]", c.kernel, c.in_channels),
                            format!("{:?}", x.shape()),
                        ))
                    }
                };
                let cols = c.unfold(x, out_len);
                let n = c.out_channels;
                let mut out = Vec::with_capacity(out_len * n);
                for _ in 0..out_len {
                    out.extend_from_slice(c.bias.data());
                }
                gemm(out_len, c.kernel * c.in_channels, n, &cols, false, c.weight.data(), false, 1.0, &mut out);
                Tensor::new(vec![out_len, n], out)
            }
            Layer::Act(a) => Ok(x.map(|v| a.apply(v))),
            Layer::Upsample(f) => {
                let (len, c) = (x.rows(), x.cols());
                let mut out = Vec::with_capacity(len * f * c);
                for t in 0..len {
                    for _ in 0..*f {
                        out.extend_from_slice(x.row(t));
                    }
                }
                Tensor::new(vec![len * f, c], out)
            }
            Layer::Residual(inner) => {
                let y = inner.infer(x).map_err(|e| nest(e, index))?;
                y.add(x).map_err(|_| {
                    Error::dim(
                        format!("layer {index} (residual)"),
                        format!("{:?}", x.shape()),
                        format!("{:?}", y.shape()),
                    )
                })
            }
        }
    }

    /// Returns the input gradient and pushes parameter gradients onto `grads`.
    fn backward(&self, x: &Tensor, y: &Tensor, gy: &Tensor, grads: &mut Vec<Tensor>) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => {
                let (m, k, n) = (x.rows(), d.inputs(), d.outputs());
                let mut gw = vec![0.0; k * n];
                gemm(k, m, n, x.data(), true, gy.data(), false, 0.0, &mut gw);
                let gb = column_sums(gy);
                let mut gx = vec![0.0; m * k];
                gemm(m, n, k, gy.data(), false, d.weight.data(), true, 0.0, &mut gx);
                grads.push(Tensor::new(vec![k, n], gw)?);
                grads.push(gb);
                Tensor::new(x.shape().to_vec(), gx)
            }
            Layer::Conv1d(c) => {
                let out_len = y.rows();
                let width = c.kernel * c.in_channels;
                let n = c.out_channels;
                let cols = c.unfold(x, out_len);
                let mut gw = vec![0.0; width * n];
                gemm(width, out_len, n, &cols, true, gy.data(), false, 0.0, &mut gw);
                let gb = column_sums(gy);
                let mut gcols = vec![0.0; out_len * width];
                gemm(out_len, n, width, gy.data(), false, c.weight.data(), true, 0.0, &mut gcols);
                grads.push(Tensor::new(vec![width, n], gw)?);
                grads.push(gb);
                Ok(c.fold(&gcols, out_len, x.rows()))
            }
            Layer::Act(a) => {
                let data = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(gy.data())
                    .map(|((&xi, &yi), &g)| g * a.derivative(xi, yi))
                    .collect();
                Tensor::new(x.shape().to_vec(), data)
            }
            Layer::Upsample(f) => {
                let (len, c) = (x.rows(), x.cols());
                let mut gx = Tensor::zeros(&[len, c]);
                for t in 0..len {
                    let row = gx.row_mut(t);
                    for r in 0..*f {
                        for (g, v) in row.iter_mut().zip(gy.row(t * f + r)) {
                            *g += v;
                        }
                    }
                }
                Ok(gx)
            }
            Layer::Residual(inner) => {
                let acts = inner.forward(x)?;
                let (inner_grads, gx_inner) = inner.backward(&acts, gy)?;
                grads.extend(inner_grads);
                gx_inner.add(gy)
            }
        }
    }
}

fn nest(e: Error, index: usize) -> Error {
    match e {
        Error::Dimension { context, expected, got } => Error::Dimension {
            context: format!("layer {index} (residual) / {context}"),
            expected,
            got,
        },
        other => other,
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let cols = g.cols();
    let mut out = vec![0.0; cols];
    for r in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Tensor::new(vec![cols], out).expect("column sums")
}

/// Ordered stack of layers with a fixed, named parameter enumeration.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    /// Parameters in stable order with dotted names, e.g. `3.weight`, `5.1.bias`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(Dense { weight, bias }) | Layer::Conv1d(Conv1d { weight, bias, .. }) => {
                    out.push((format!("{prefix}{i}.weight"), weight));
                    out.push((format!("{prefix}{i}.bias"), bias));
                }
                Layer::Residual(inner) => inner.collect_params(&format!("{prefix}{i}."), out),
                Layer::Act(_) | Layer::Upsample(_) => {}
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.collect_params_mut(&mut out);
        out
    }

    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(Dense { weight, bias }) | Layer::Conv1d(Conv1d { weight, bias, .. }) => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::Residual(inner) => inner.collect_params_mut(out),
                Layer::Act(_) | Layer::Upsample(_) => {}
            }
        }
    }

    /// Input frame range `[lo, hi]` that can influence output frames `[lo, hi]`,
    /// ignoring clipping at the sequence boundaries.
    pub fn receptive_field(&self, lo: isize, hi: isize) -> (isize, isize) {
        let (mut lo, mut hi) = (lo, hi);
        for layer in self.layers.iter().rev() {
            match layer {
                Layer::Conv1d(c) => {
                    lo = lo * c.stride as isize - c.padding as isize;
                    hi = hi * c.stride as isize - c.padding as isize + c.kernel as isize - 1;
                }
                Layer::Upsample(f) => {
                    lo = lo.div_euclid(*f as isize);
                    hi = hi.div_euclid(*f as isize);
                }
                Layer::Residual(inner) => {
                    let (a, b) = inner.receptive_field(lo, hi);
                    lo = lo.min(a);
                    hi = hi.max(b);
                }
                Layer::Dense(_) | Layer::Act(_) => {}
            }
        }
        (lo, hi)
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Input followed by every layer output; the last entry is the network output.
    pub fn forward(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.forward(acts.last().expect("non-empty"), i)?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Forward pass that keeps only the output.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(x.as_ref().unwrap_or(input), i)?;
            x = Some(y);
        }
        Ok(x.unwrap_or_else(|| input.clone()))
    }

    /// Parameter gradients (in [`Network::named_params`] order) and the input gradient.
    pub fn backward(&self, acts: &[Tensor], output_grad: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        if acts.len() != self.layers.len() + 1 {
            return Err(Error::Structure(format!(
                "{} activations for a network of {} layers",
                acts.len(),
                self.layers.len()
            )));
        }
        let out = acts.last().expect("non-empty");
        if out.shape() != output_grad.shape() {
            return Err(Error::Structure(format!(
                "output gradient shape {:?} does not match output {:?}",
                output_grad.shape(),
                out.shape()
            )));
        }
        let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut g = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut grads = Vec::new();
            g = layer.backward(&acts[i], &acts[i + 1], &g, &mut grads).map_err(|e| match e {
                Error::Dimension { .. } => Error::Structure(format!(
                    "activation {i} inconsistent with layer {i} ({})",
                    layer.kind()
                )),
                other => other,
            })?;
            per_layer.push(grads);
        }
        per_layer.reverse();
        Ok((per_layer.into_iter().flatten().collect(), g))
    }
}

/// Zero tensors shaped like a network's parameters.
pub fn zero_grads(net: &Network) -> Vec<Tensor> {
    net.named_params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect()
}

/// `acc += g` elementwise over matching parameter lists.
pub fn accumulate(acc: &mut [Tensor], g: &[Tensor]) -> Result<()> {
    if acc.len() != g.len() {
        return Err(Error::Structure(format!(
            "gradient lists of length {} and {}",
            acc.len(),
            g.len()
        )));
    }
    for (a, b) in acc.iter_mut().zip(g) {
        a.add_assign(b)?;
    }
    Ok(())
}

/// Convenience constructors for the fixed layer vocabulary.
pub mod build {
    use super::*;

    pub fn mlp<R: Rng + ?Sized>(sizes: &[usize], act: Activation, rng: &mut R) -> Network {
        let mut layers = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            layers.push(Layer::Dense(Dense::new(w[0], w[1], 1.0, rng)));
            if i + 2 < sizes.len() {
                layers.push(Layer::Act(act));
            }
        }
        Network::new(layers)
    }

    /// `x + conv_k(act(conv_k(act(x))))` with a down-weighted second conv.
    pub fn res_block<R: Rng + ?Sized>(width: usize, kernel: usize, act: Activation, rng: &mut R) -> Layer {
        Layer::Residual(Network::new(vec![
            Layer::Act(act),
            Layer::Conv1d(Conv1d::same(width, width, kernel, 1.0, rng)),
            Layer::Act(act),
            Layer::Conv1d(Conv1d::same(width, width, 1, 0.5, rng)),
        ]))
    }
}
