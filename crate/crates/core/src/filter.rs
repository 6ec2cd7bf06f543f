//! Separable Gaussian smoothing with mirror (`dcb|abcd|cba`) boundary handling.
//!
//! A filter is stored as two dense matrices that already fold in the padding,
//! so smoothing an `H × W` image is `Mh · X · Mwᵀ`, and the adjoint needed by
//! the tape is `Mhᵀ · G · Mw`.

use crate::autodiff::LinearMap;
use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm, MatRef};
use crate::tensor::{Float, Tensor};

/// Maps an index into `[0, n)` by mirroring about the edges without repeating
/// the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    if r < n as isize {
        r as usize
    } else {
        (period - r) as usize
    }
}

/// Normalized 1D Gaussian taps of length `2·radius + 1`.
pub fn gaussian_taps(radius: usize, sigma: Float) -> Result<Vec<Float>> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!("Gaussian sigma must be positive, got {sigma}")));
    }
    let raw: Vec<Float> = (0..=2 * radius)
        .map(|t| {
            let d = t as Float - radius as Float;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: Float = raw.iter().sum();
    Ok(raw.into_iter().map(|g| g / total).collect())
}

/// `n × n` matrix applying `taps` along one axis with mirrored boundaries.
fn filter_matrix(n: usize, taps: &[Float]) -> Vec<Float> {
    let radius = (taps.len() / 2) as isize;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for (t, &g) in taps.iter().enumerate() {
            let j = reflect_index(i as isize + t as isize - radius, n);
            m[i * n + j] += g;
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct SeparableFilter {
    rows: usize,
    cols: usize,
    along_h: Vec<Float>,
    along_w: Vec<Float>,
}

impl SeparableFilter {
    /// Gaussian of side `window` (odd) and width `sigma` for `rows × cols` images.
    pub fn gaussian(rows: usize, cols: usize, window: usize, sigma: Float) -> Result<Self> {
        if window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("Gaussian window side must be odd, got {window}")));
        }
        let taps = gaussian_taps(window / 2, sigma)?;
        Ok(Self::from_taps(rows, cols, &taps))
    }

    pub fn from_taps(rows: usize, cols: usize, taps: &[Float]) -> Self {
        Self {
            rows,
            cols,
            along_h: filter_matrix(rows, taps),
            along_w: filter_matrix(cols, taps),
        }
    }

    fn check(&self, shape: &[usize]) -> Result<()> {
        let n = shape.len();
        if n < 2 || shape[n - 2] != self.rows || shape[n - 1] != self.cols {
            return Err(Error::InvalidShape {
                op: "gaussian_filter",
                detail: format!("filter built for [..., {}, {}], got {shape:?}", self.rows, self.cols),
            });
        }
        Ok(())
    }

    /// Applies `A · X · Bᵀ` (or `Aᵀ · X · B` when `transpose`) to every image.
    fn sandwich(&self, input: &Tensor, transpose: bool) -> Result<Tensor> {
        self.check(input.shape())?;
        let (h, w) = (self.rows, self.cols);
        let (a, b) = if transpose {
            (MatRef::transposed(&self.along_h, h), MatRef::row_major(&self.along_w, w))
        } else {
            (MatRef::row_major(&self.along_h, h), MatRef::transposed(&self.along_w, w))
        };
        let mut out = vec![0.0; input.len()];
        let mut tmp = vec![0.0; h * w];
        for (img, dst) in input.data().chunks(h * w).zip(out.chunks_mut(h * w)) {
            gemm(h, h, w, a, MatRef::row_major(img, w), &mut tmp, 0.0);
            gemm(h, w, w, MatRef::row_major(&tmp, w), b, dst, 0.0);
        }
        Ok(Tensor::from_parts(input.shape().to_vec(), out))
    }

    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        self.sandwich(input, false)
    }
}

impl LinearMap for SeparableFilter {
    fn apply(&self, input: &Tensor) -> Result<Tensor> {
        self.sandwich(input, false)
    }

    fn adjoint(&self, grad_out: &Tensor, _input_shape: &[usize]) -> Result<Tensor> {
        self.sandwich(grad_out, true)
    }
}

/// Blurs `[..., H, W]` images with a normalized Gaussian of radius `⌈3σ⌉`.
pub fn gaussian_blur(images: &Tensor, sigma: Float) -> Result<Tensor> {
    if images.rank() < 2 {
        return Err(Error::InvalidShape {
            op: "gaussian_blur",
            detail: format!("expected [..., H, W], got {:?}", images.shape()),
        });
    }
    let taps = gaussian_taps((3.0 * sigma).ceil().max(0.0) as usize, sigma)?;
    let n = images.rank();
    SeparableFilter::from_taps(images.shape()[n - 2], images.shape()[n - 1], &taps).apply(images)
}
