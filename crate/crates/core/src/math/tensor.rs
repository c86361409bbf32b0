use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Sequences are stored as `[time, channels]`; vectors as `[1, dim]` or `[dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                format!("tensor of shape {shape:?}"),
                expected,
                data.len(),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Row-major matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Structure("ragged rows".into()));
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension (time steps for a sequence).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of the trailing dimensions.
    pub fn cols(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim("reshape", self.data.len(), n));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    fn check_same(&self, other: &Tensor, context: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                context,
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Tensor) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        let rows = self.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Tensor {
            shape: vec![rows, end - start],
            data,
        }
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let c = self.cols();
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(1);
        }
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * c..end * c].to_vec(),
        }
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn hcat(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().map_or(0, |t| t.rows());
        if parts.iter().any(|t| t.rows() != rows) {
            return Err(Error::Structure("hcat with unequal row counts".into()));
        }
        let cols: usize = parts.iter().map(|t| t.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in parts {
                data.extend_from_slice(t.row(r));
            }
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }

    /// Vertical concatenation of 2-D tensors with equal column counts.
    pub fn vcat(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.first().map_or(0, |t| t.cols());
        if parts.iter().any(|t| t.cols() != cols) {
            return Err(Error::Structure("vcat with unequal column counts".into()));
        }
        let rows: usize = parts.iter().map(|t| t.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for t in parts {
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }

    /// Mean over the leading (time) axis, as a `[1, cols]` row.
    pub fn mean_rows(&self) -> Tensor {
        let (rows, cols) = (self.rows(), self.cols());
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / rows.max(1) as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Tensor {
            shape: vec![1, cols],
            data: out,
        }
    }
}
