//! Dense NCHW tensor of `f32` values.

use crate::error::{Error, Result};

/// Dense row-major array of rank 1 to 4 (W fastest).
///
/// Lower-rank tensors are read as NCHW with leading extents of 1, so a
/// `[N, C]` tensor behaves like `[N, C, 1, 1]` in spatial code.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::dim(
            "tensor",
            format!("rank {} outside 1..=4", shape.len()),
        ));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::dim("tensor", format!("axis {axis} has extent 0")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::dim(
                "tensor",
                format!(
                    "shape {shape:?} needs {len} values, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Rank-1 tensor holding `values`.
    pub fn vector(values: &[f32]) -> Result<Self> {
        Self::from_vec(&[values.len()], values.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Extents padded on the left to `[N, C, H, W]`.
    pub fn dims4(&self) -> [usize; 4] {
        let mut dims = [1; 4];
        let offset = 4 - self.shape.len();
        dims[offset..].copy_from_slice(&self.shape);
        dims
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Value at NCHW coordinates (lower ranks padded as in [`Tensor::dims4`]).
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        let [_, cs, hs, ws] = self.dims4();
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f32) -> Self {
        self.map(|v| v * factor)
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.require_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.require_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn require_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                format!("extents {:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }
}

/// Argmax positions recorded by max pooling.
///
/// `dims` are the pooled extents `[N, C, Ho, Wo]`; each entry is a linear
/// index `y * W + x` into the pre-pool `H x W` plane of the same `(n, c)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Switches {
    pub dims: [usize; 4],
    pub input_hw: [usize; 2],
    pub indices: Vec<usize>,
}
