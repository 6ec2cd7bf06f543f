//! Dense row-major tensors.
//!
//! Shapes are explicit and never broadcast implicitly: binary elementwise
//! operations require identical shapes, and the only mixed-shape operations
//! are the scalar variants (`scale`, `add_scalar`) and the explicit
//! channel-bias helper used by the network layers.

mod conv;
pub(crate) mod gemm;

pub use conv::{conv2d, conv2d_transpose, conv_output_len, Padding};
pub(crate) use conv::{conv2d_kernel_grad, conv2d_transpose_kernel_grad, conv2d_transpose_to};

use std::fmt;

use crate::error::{Error, Result};

#[cfg(not(feature = "f32"))]
pub type Float = f64;
#[cfg(feature = "f32")]
pub type Float = f32;

#[cfg(not(feature = "f32"))]
pub use std::f64::consts;
#[cfg(feature = "f32")]
pub use std::f32::consts;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Float>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        let mut list = f.debug_list();
        list.entries(self.data.iter().take(PREVIEW));
        if self.data.len() > PREVIEW {
            list.entry(&format_args!("... {} more", self.data.len() - PREVIEW));
        }
        list.finish()
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<Float>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                detail: format!("zero-sized dimension in {shape:?}"),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                detail: format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a tensor whose shape is known to be consistent with `data`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<Float>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: Float) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: Float) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> Float) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), (0..n).map(&mut f).collect())
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

    pub fn data(&self) -> &[Float] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Float] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Float> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<Float> {
        if self.data.len() != 1 {
            return Err(Error::InvalidShape {
                op: "item",
                detail: format!("expected one element, shape is {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    /// Row-major index of a multi-dimensional coordinate.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn at(&self, index: &[usize]) -> Float {
        self.data[self.offset(index)]
    }

    /// The `i`-th slab along the leading axis.
    pub fn index_axis0(&self, i: usize) -> Result<Tensor> {
        if self.shape.len() < 2 || i >= self.shape[0] {
            return Err(Error::InvalidShape {
                op: "index_axis0",
                detail: format!("index {i} into shape {:?}", self.shape),
            });
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Tensor::from_parts(
            self.shape[1..].to_vec(),
            self.data[i * inner..(i + 1) * inner].to_vec(),
        ))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::InvalidShape {
            op: "stack",
            detail: "no tensors to stack".into(),
        })?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn map(&self, f: impl Fn(Float) -> Float) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(Float, Float) -> Float) -> Result<Tensor> {
        self.check_same_shape(other, op)?;
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "div", |a, b| a / b)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: Float) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn add_scalar(&self, s: Float) -> Tensor {
        self.map(|x| x + s)
    }

    pub fn neg(&self) -> Tensor {
        self.map(|x| -x)
    }

    pub fn exp(&self) -> Tensor {
        self.map(Float::exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(bad) = self.data.iter().find(|&&x| x.is_nan() || x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.map(Float::ln))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(Float::tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn abs(&self) -> Tensor {
        self.map(Float::abs)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(bad) = self.data.iter().find(|&&x| x.is_nan() || x < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative input {bad}"),
            });
        }
        Ok(self.map(Float::sqrt))
    }

    pub fn sum(&self) -> Float {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> Float {
        self.sum() / self.data.len() as Float
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<Float> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Float::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm::gemm(
            m,
            k,
            n,
            gemm::MatRef::row_major(&self.data, k),
            gemm::MatRef::row_major(&other.data, n),
            &mut out,
            0.0,
        );
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    pub fn transpose2d(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose2d",
                detail: format!("expected rank 2, got {:?}", self.shape),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], out))
    }

    /// Adds `bias[c]` to every element of channel `c`, where the channel axis
    /// is axis 1 of a `[batch, channels, ...]` tensor.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let channels = channel_count(&self.shape, bias, "add_channel_bias")?;
        let inner: usize = self.shape[2..].iter().product();
        let mut out = self.data.clone();
        for (chunk_idx, chunk) in out.chunks_mut(inner).enumerate() {
            let b = bias.data[chunk_idx % channels];
            chunk.iter_mut().for_each(|x| *x += b);
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    /// Sums a `[batch, channels, ...]` tensor down to `[channels]`.
    pub fn sum_to_channels(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(Error::InvalidShape {
                op: "sum_to_channels",
                detail: format!("expected rank >= 2, got {:?}", self.shape),
            });
        }
        let channels = self.shape[1];
        let inner: usize = self.shape[2..].iter().product();
        let mut out = vec![0.0; channels];
        for (chunk_idx, chunk) in self.data.chunks(inner).enumerate() {
            out[chunk_idx % channels] += chunk.iter().sum::<Float>();
        }
        Ok(Tensor::from_parts(vec![channels], out))
    }
}

fn channel_count(shape: &[usize], bias: &Tensor, op: &'static str) -> Result<usize> {
    if shape.len() < 2 || bias.rank() != 1 || bias.shape[0] != shape[1] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: bias.shape.clone(),
        });
    }
    Ok(shape[1])
}

/// Numerically stable logistic function.
pub fn sigmoid(x: Float) -> Float {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pair of equally shaped real tensors holding the real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    re: Tensor,
    im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        re.check_same_shape(&im, "ComplexTensor::new")?;
        Ok(Self { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            re: Tensor::zeros(shape),
            im: Tensor::zeros(shape),
        }
    }

    pub fn re(&self) -> &Tensor {
        &self.re
    }

    pub fn im(&self) -> &Tensor {
        &self.im
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn into_parts(self) -> (Tensor, Tensor) {
        (self.re, self.im)
    }

    pub fn scale(&self, s: Float) -> ComplexTensor {
        Self {
            re: self.re.scale(s),
            im: self.im.scale(s),
        }
    }

    /// Largest modulus of the elementwise difference.
    pub fn max_abs_diff(&self, other: &ComplexTensor) -> Result<Float> {
        self.re.check_same_shape(&other.re, "ComplexTensor::max_abs_diff")?;
        Ok(self
            .re
            .data()
            .iter()
            .zip(self.im.data())
            .zip(other.re.data().iter().zip(other.im.data()))
            .map(|((ar, ai), (br, bi))| (ar - br).hypot(ai - bi))
            .fold(0.0, Float::max))
    }
}
