//! One- and two-dimensional discrete Fourier transforms on complex buffers.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley-Tukey transform, any
//! other length a direct O(n²) sum. Both share one twiddle table in which the
//! quarter-turn angles are exact, so purely real bins (DC and Nyquist of a
//! real signal) come out with an imaginary part of exactly zero.

use num_complex::Complex;

use crate::tensor::{consts::PI, Float};

pub(crate) type Cplx = Complex<Float>;

/// `(cos, sin)` of `2π j / n` with exact values at multiples of `π/2`.
pub(crate) fn unit_root(j: usize, n: usize) -> (Float, Float) {
    let j = j % n;
    if (4 * j).is_multiple_of(n) {
        return match 4 * j / n {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
    }
    let angle = 2.0 * PI * j as Float / n as Float;
    (angle.cos(), angle.sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    /// Kernel `e^{-iθ}`.
    Forward,
    /// Kernel `e^{+iθ}`, unnormalized.
    Inverse,
}

#[derive(Debug, Clone)]
pub(crate) struct Dft1d {
    n: usize,
    /// `e^{-2πij/n}` for `j in 0..n`.
    twiddles: Vec<Cplx>,
    radix2: bool,
}

impl Dft1d {
    pub(crate) fn new(n: usize) -> Self {
        Self::with_strategy(n, n.is_power_of_two())
    }

    /// Forces the direct summation even for power-of-two lengths.
    pub(crate) fn naive(n: usize) -> Self {
        Self::with_strategy(n, false)
    }

    fn with_strategy(n: usize, radix2: bool) -> Self {
        assert!(n >= 1);
        let twiddles = (0..n)
            .map(|j| {
                let (c, s) = unit_root(j, n);
                Cplx::new(c, -s)
            })
            .collect();
        Self { n, twiddles, radix2 }
    }

    fn twiddle(&self, j: usize, dir: Direction) -> Cplx {
        let w = self.twiddles[j % self.n];
        match dir {
            Direction::Forward => w,
            Direction::Inverse => w.conj(),
        }
    }

    pub(crate) fn transform(&self, buf: &mut [Cplx], scratch: &mut Vec<Cplx>, dir: Direction) {
        debug_assert_eq!(buf.len(), self.n);
        if self.n == 1 {
            return;
        }
        if self.radix2 {
            self.radix2_in_place(buf, dir);
        } else {
            scratch.clear();
            scratch.extend_from_slice(buf);
            for (k, out) in buf.iter_mut().enumerate() {
                let mut acc = Cplx::new(0.0, 0.0);
                for (t, &x) in scratch.iter().enumerate() {
                    acc += x * self.twiddle(k * t, dir);
                }
                *out = acc;
            }
        }
    }

    fn radix2_in_place(&self, buf: &mut [Cplx], dir: Direction) {
        let n = self.n;
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let step = n / size;
            for start in (0..n).step_by(size) {
                for j in 0..half {
                    let w = self.twiddle(j * step, dir);
                    let t = buf[start + j + half] * w;
                    let u = buf[start + j];
                    buf[start + j] = u + t;
                    buf[start + j + half] = u - t;
                }
            }
            size *= 2;
        }
    }
}

/// Separable 2D transform over a row-major `rows × cols` buffer.
#[derive(Debug, Clone)]
pub(crate) struct Dft2d {
    rows: usize,
    cols: usize,
    along_rows: Dft1d,
    along_cols: Dft1d,
}

impl Dft2d {
    pub(crate) fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            along_rows: Dft1d::new(cols),
            along_cols: Dft1d::new(rows),
        }
    }

    pub(crate) fn naive(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            along_rows: Dft1d::naive(cols),
            along_cols: Dft1d::naive(rows),
        }
    }

    pub(crate) fn transform(&self, buf: &mut [Cplx], dir: Direction) {
        debug_assert_eq!(buf.len(), self.rows * self.cols);
        let mut scratch = Vec::with_capacity(self.rows.max(self.cols));
        for row in buf.chunks_mut(self.cols) {
            self.along_rows.transform(row, &mut scratch, dir);
        }
        let mut column = vec![Cplx::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for (r, slot) in column.iter_mut().enumerate() {
                *slot = buf[r * self.cols + c];
            }
            self.along_cols.transform(&mut column, &mut scratch, dir);
            for (r, &v) in column.iter().enumerate() {
                buf[r * self.cols + c] = v;
            }
        }
    }
}
