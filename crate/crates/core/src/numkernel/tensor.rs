//! Dense row-major tensors.
//!
//! Storage is always `f64`. A tensor tagged [`Precision::Binary32`] holds
//! values that are exactly representable as `f32`; every constructor and
//! kernel output rounds through `f32` when that tag is set.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Floating point precision a tensor's values are held at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Binary32,
    #[default]
    Binary64,
}

impl Precision {
    /// The lower of two precisions; mixed-precision results degrade to binary32.
    pub fn join(self, other: Precision) -> Precision {
        if self == Precision::Binary32 || other == Precision::Binary32 {
            Precision::Binary32
        } else {
            Precision::Binary64
        }
    }

    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            Precision::Binary32 => x as f32 as f64,
            Precision::Binary64 => x,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Precision::Binary32 => 4,
            Precision::Binary64 => 8,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Binary32 => f.write_str("binary32"),
            Precision::Binary64 => f.write_str("binary64"),
        }
    }
}

/// A dense tensor with an explicit shape.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    precision: Precision,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}<{}>", self.shape, self.precision)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub(crate) fn fmt_shape(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join("×"))
}

impl Tensor {
    /// Builds a binary64 tensor, checking that `data` fills `shape` exactly.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::with_precision(shape, data, Precision::Binary64)
    }

    pub fn with_precision(shape: Vec<usize>, mut data: Vec<f64>, precision: Precision) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "extents must be positive, got {}",
                fmt_shape(&shape)
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {} needs {} elements, buffer has {}",
                fmt_shape(&shape),
                n,
                data.len()
            )));
        }
        if precision == Precision::Binary32 {
            data.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
        Ok(Self { shape, data, precision })
    }

    /// Internal constructor for kernel outputs whose shape is known to be valid.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>, precision: Precision) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut t = Self { shape, data, precision };
        t.round_in_place();
        t
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            precision: Precision::Binary64,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            precision: Precision::Binary64,
        }
    }

    pub fn vector(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len()],
            data: values.to_vec(),
            precision: Precision::Binary64,
        }
    }

    /// Builds a 2-D tensor from rows. Panics on ragged input; meant for literals.
    pub fn matrix<const C: usize>(rows: &[[f64; C]]) -> Self {
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self {
            shape: vec![rows.len(), C],
            data,
            precision: Precision::Binary64,
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Re-tags the tensor, rounding values when narrowing to binary32.
    pub fn to_precision(&self, precision: Precision) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.clone(), precision)
    }

    pub(crate) fn round_in_place(&mut self) {
        if self.precision == Precision::Binary32 {
            self.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    /// Row-major strides for the current shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(self.strides())
            .zip(&self.shape)
            .map(|((&i, s), &d)| {
                assert!(i < d, "index {i} out of bounds for extent {d}");
                i * s
            })
            .sum()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = self.precision.round(value);
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "cannot reshape {} into {}",
                fmt_shape(&self.shape),
                fmt_shape(shape)
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            precision: self.precision,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect(), self.precision)
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(op, self, other)?;
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            self.precision.join(other.precision),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|x| x * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], out, self.precision))
    }

    /// Swaps the first and last axes of a 3-D tensor: `[a×b×c] → [c×b×a]`.
    pub fn swap_outer_axes(&self) -> Result<Tensor> {
        if self.ndim() != 3 {
            return Err(Error::Shape(format!(
                "swap_outer_axes needs a 3-D tensor, got {}",
                fmt_shape(&self.shape)
            )));
        }
        let (a, b, c) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut out = vec![0.0; a * b * c];
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    out[(k * b + j) * a + i] = self.data[(i * b + j) * c + k];
                }
            }
        }
        Ok(Tensor::from_parts(vec![c, b, a], out, self.precision))
    }

    pub(crate) fn dims2(&self, op: &str) -> Result<(usize, usize)> {
        if self.ndim() != 2 {
            return Err(Error::Shape(format!(
                "{op} needs a 2-D tensor, got {}",
                fmt_shape(&self.shape)
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub(crate) fn dims3(&self, op: &str) -> Result<(usize, usize, usize)> {
        if self.ndim() != 3 {
            return Err(Error::Shape(format!(
                "{op} needs a 3-D tensor, got {}",
                fmt_shape(&self.shape)
            )));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2]))
    }
}

pub(crate) fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Dimension {
            op: op.to_string(),
            left: fmt_shape(&a.shape),
            right: fmt_shape(&b.shape),
        });
    }
    Ok(())
}
