//! 2D convolution (cross-correlation) and its transpose via im2col + GEMM.
//!
//! Inputs are `[C, H, W]` or batched `[B, C, H, W]`. Convolution kernels are
//! `[C_out, C_in, k, k]`; transposed-convolution kernels are
//! `[C_in, C_out, k, k]`, i.e. the kernel of the convolution being transposed.

use super::gemm::{gemm, MatRef};
use super::{Float, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding of `k - 1` pixels, split evenly with the extra pixel on
    /// the trailing side.
    Same,
    Valid,
}

impl Padding {
    fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Same => ((k - 1) / 2, k - 1 - (k - 1) / 2),
            Padding::Valid => (0, 0),
        }
    }
}

/// Output length of a convolution along one axis, `None` when the kernel does
/// not fit.
pub fn conv_output_len(len: usize, k: usize, stride: usize, padding: Padding) -> Option<usize> {
    let (before, after) = padding.amounts(k);
    let padded = len + before + after;
    (padded >= k && stride >= 1).then(|| (padded - k) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(channels: usize, h: usize, w: usize, k: usize, stride: usize, padding: Padding) -> Result<Self> {
        let out_h = conv_output_len(h, k, stride, padding);
        let out_w = conv_output_len(w, k, stride, padding);
        match (out_h, out_w) {
            (Some(out_h), Some(out_w)) => Ok(Self {
                channels,
                h,
                w,
                k,
                stride,
                pad: padding.amounts(k).0,
                out_h,
                out_w,
            }),
            _ => Err(Error::InvalidShape {
                op: "conv2d",
                detail: format!("kernel {k} with stride {stride} does not fit a {h}x{w} image"),
            }),
        }
    }

    fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate hit by output `o` and kernel tap `t`, if inside the image.
    #[inline]
    fn source(&self, o: usize, t: usize, len: usize) -> Option<usize> {
        (o * self.stride + t).checked_sub(self.pad).filter(|&i| i < len)
    }

    fn im2col(&self, image: &[Float], cols: &mut [Float]) {
        let n = self.col_cols();
        for c in 0..self.channels {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let src_row = self.source(oy, ki, self.h);
                        for ox in 0..self.out_w {
                            dst[oy * self.out_w + ox] = match (src_row, self.source(ox, kj, self.w)) {
                                (Some(y), Some(x)) => plane[y * self.w + x],
                                _ => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[Float], image: &mut [Float]) {
        let n = self.col_cols();
        for c in 0..self.channels {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let Some(y) = self.source(oy, ki, self.h) else {
                            continue;
                        };
                        for ox in 0..self.out_w {
                            if let Some(x) = self.source(ox, kj, self.w) {
                                plane[y * self.w + x] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Splits an input into (batch, channels, height, width), remembering whether
/// the batch axis was present.
fn unpack_input(input: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize, bool)> {
    match *input.shape() {
        [c, h, w] => Ok((1, c, h, w, false)),
        [b, c, h, w] => Ok((b, c, h, w, true)),
        _ => Err(Error::InvalidShape {
            op,
            detail: format!("expected [C,H,W] or [B,C,H,W], got {:?}", input.shape()),
        }),
    }
}

fn unpack_kernel(kernel: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *kernel.shape() {
        [a, b, k, k2] if k == k2 && k >= 1 => Ok((a, b, k)),
        _ => Err(Error::InvalidShape {
            op,
            detail: format!("expected square kernel [A,B,k,k], got {:?}", kernel.shape()),
        }),
    }
}

fn output_shape(batched: bool, b: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if batched {
        vec![b, c, h, w]
    } else {
        vec![c, h, w]
    }
}

fn check_stride(stride: usize, op: &'static str) -> Result<()> {
    if stride == 0 {
        return Err(Error::InvalidArgument(format!("{op}: stride must be at least 1")));
    }
    Ok(())
}

pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    check_stride(stride, "conv2d")?;
    let (batch, c_in, h, w, batched) = unpack_input(input, "conv2d")?;
    let (c_out, kc, k) = unpack_kernel(kernel, "conv2d")?;
    if kc != c_in {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    let g = Geometry::new(c_in, h, w, k, stride, padding)?;
    let (rows, n) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * n];
    let mut out = vec![0.0; batch * c_out * n];
    let in_len = c_in * h * w;
    for b in 0..batch {
        g.im2col(&input.data()[b * in_len..(b + 1) * in_len], &mut cols);
        gemm(
            c_out,
            rows,
            n,
            MatRef::row_major(kernel.data(), rows),
            MatRef::row_major(&cols, n),
            &mut out[b * c_out * n..(b + 1) * c_out * n],
            0.0,
        );
    }
    Ok(Tensor::from_parts(output_shape(batched, batch, c_out, g.out_h, g.out_w), out))
}

/// Gradient of `conv2d(input, kernel)` with respect to the kernel.
pub(crate) fn conv2d_kernel_grad(
    input: &Tensor,
    grad_out: &Tensor,
    kernel_shape: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let (batch, c_in, h, w, _) = unpack_input(input, "conv2d_kernel_grad")?;
    let c_out = kernel_shape[0];
    let k = kernel_shape[2];
    let g = Geometry::new(c_in, h, w, k, stride, padding)?;
    let (rows, n) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * n];
    let mut grad = vec![0.0; c_out * rows];
    let in_len = c_in * h * w;
    for b in 0..batch {
        g.im2col(&input.data()[b * in_len..(b + 1) * in_len], &mut cols);
        gemm(
            c_out,
            n,
            rows,
            MatRef::row_major(&grad_out.data()[b * c_out * n..(b + 1) * c_out * n], n),
            MatRef::transposed(&cols, n),
            &mut grad,
            1.0,
        );
    }
    Ok(Tensor::from_parts(kernel_shape.to_vec(), grad))
}

/// Transposed convolution with the conventional output size: `H * stride` for
/// `Same` padding and `(H - 1) * stride + k` for `Valid`.
pub fn conv2d_transpose(input: &Tensor, kernel: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    check_stride(stride, "conv2d_transpose")?;
    let (_, _, h, w, _) = unpack_input(input, "conv2d_transpose")?;
    let (_, _, k) = unpack_kernel(kernel, "conv2d_transpose")?;
    let out_len = |len: usize| match padding {
        Padding::Same => len * stride,
        Padding::Valid => (len - 1) * stride + k,
    };
    conv2d_transpose_to(input, kernel, stride, padding, (out_len(h), out_len(w)))
}

/// Transposed convolution producing an explicit spatial size. This is the
/// exact adjoint of `conv2d` applied to an image of that size.
pub(crate) fn conv2d_transpose_to(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: Padding,
    (out_h, out_w): (usize, usize),
) -> Result<Tensor> {
    check_stride(stride, "conv2d_transpose")?;
    let (batch, c_in, h, w, batched) = unpack_input(input, "conv2d_transpose")?;
    let (kc, c_out, k) = unpack_kernel(kernel, "conv2d_transpose")?;
    if kc != c_in {
        return Err(Error::ShapeMismatch {
            op: "conv2d_transpose",
            lhs: input.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    let g = Geometry::new(c_out, out_h, out_w, k, stride, padding)?;
    if (g.out_h, g.out_w) != (h, w) {
        return Err(Error::InvalidShape {
            op: "conv2d_transpose",
            detail: format!("a {out_h}x{out_w} output does not convolve back to {h}x{w}"),
        });
    }
    let (rows, n) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * n];
    let out_len = c_out * out_h * out_w;
    let mut out = vec![0.0; batch * out_len];
    for b in 0..batch {
        gemm(
            rows,
            c_in,
            n,
            MatRef::transposed(kernel.data(), rows),
            MatRef::row_major(&input.data()[b * c_in * n..(b + 1) * c_in * n], n),
            &mut cols,
            0.0,
        );
        g.col2im(&cols, &mut out[b * out_len..(b + 1) * out_len]);
    }
    Ok(Tensor::from_parts(output_shape(batched, batch, c_out, out_h, out_w), out))
}

/// Gradient of `conv2d_transpose(input, kernel)` with respect to the kernel.
pub(crate) fn conv2d_transpose_kernel_grad(
    input: &Tensor,
    grad_out: &Tensor,
    kernel_shape: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let (batch, c_in, h, w, _) = unpack_input(input, "conv2d_transpose_kernel_grad")?;
    let (_, c_out, out_h, out_w, _) = unpack_input(grad_out, "conv2d_transpose_kernel_grad")?;
    let k = kernel_shape[2];
    let g = Geometry::new(c_out, out_h, out_w, k, stride, padding)?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    let (rows, n) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * n];
    let mut grad = vec![0.0; c_in * rows];
    let out_len = c_out * out_h * out_w;
    for b in 0..batch {
        g.im2col(&grad_out.data()[b * out_len..(b + 1) * out_len], &mut cols);
        gemm(
            c_in,
            n,
            rows,
            MatRef::row_major(&input.data()[b * c_in * n..(b + 1) * c_in * n], n),
            MatRef::transposed(&cols, n),
            &mut grad,
            1.0,
        );
    }
    Ok(Tensor::from_parts(kernel_shape.to_vec(), grad))
}
