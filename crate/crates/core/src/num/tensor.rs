//! Dense row-major tensor.

use crate::error::{Error, Result};
use crate::num::scalar::Scalar;

/// Dense real-valued tensor, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero extent in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} implies {} values, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![S::ZERO; numel] }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: S) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> Result<Self> {
        Tensor::new(shape.to_vec(), values.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Value of a scalar (single-element) tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(Error::Usage(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Select rows along the first axis. Row `r` is the contiguous block
    /// `[r*stride, (r+1)*stride)` with `stride = numel / shape[0]`.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Self> {
        let n0 = self.shape[0];
        let stride = self.data.len() / n0;
        let mut data = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            if r >= n0 {
                return Err(Error::shape("gather_rows", format!("row {r} out of {n0}")));
            }
            data.extend_from_slice(&self.data[r * stride..(r + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Tensor::new(shape, data)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }
}

impl<S: Scalar> Tensor<S> {
    /// Squared L2 norm of all elements.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64() * v.to_f64()).sum()
    }
}
