//! Thin safe wrapper over `matrixmultiply` for strided operands.

use super::Float;

#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [Float],
    row_stride: usize,
    col_stride: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major matrix with `cols` columns.
    pub(crate) fn row_major(data: &'a [Float], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix that has `cols` columns.
    pub(crate) fn transposed(data: &'a [Float], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0
            || cols == 0
            || (rows - 1) * self.row_stride + (cols - 1) * self.col_stride < self.data.len()
    }
}

/// `out = a · b + beta · out`, with `a: m×k`, `b: k×n` and `out` row-major `m×n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>, out: &mut [Float], beta: Float) {
    assert!(a.fits(m, k) && b.fits(k, n) && out.len() >= m * n, "gemm operand out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the bounds of every operand were checked above; `out` does not
    // alias `a` or `b` because it is borrowed mutably.
    unsafe {
        raw_gemm(
            m,
            k,
            n,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(not(feature = "f32"))]
use matrixmultiply::dgemm as raw_gemm_impl;
#[cfg(feature = "f32")]
use matrixmultiply::sgemm as raw_gemm_impl;

#[allow(clippy::too_many_arguments)]
unsafe fn raw_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: *const Float,
    rsa: isize,
    csa: isize,
    b: *const Float,
    rsb: isize,
    csb: isize,
    beta: Float,
    c: *mut Float,
    rsc: isize,
    csc: isize,
) {
    raw_gemm_impl(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
}
