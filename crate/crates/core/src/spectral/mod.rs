//! Fourier machinery for the frequency losses.
//!
//! Two transforms with different conventions live here and both are kept as
//! they are defined:
//!
//! * [`dft2`] is the global 2D DFT with orthonormal `1/√(HW)` scaling.
//! * [`stft`] slides an `h_l × h_l` Hann window over the image with stride
//!   `h_s` and takes the *unnormalized* DFT of every windowed patch. Window
//!   anchors are the top-left corners `(a·h_s, b·h_s)`; trailing pixels that no
//!   full window covers are ignored, which gives `K = ⌊(M − h_l)/h_s⌋ + 1`
//!   windows down and `L = ⌊(N − h_l)/h_s⌋ + 1` across.
//!
//! Both transforms are also available as tape operations ([`stft_var`],
//! [`dft2_var`]) so losses built on them are differentiable.

mod dft;

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{principal_atan2, LinearMap, Var};
use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Float, Tensor};

pub(crate) use dft::{Cplx, Dft2d, Direction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    /// Window side length `h_l` in pixels.
    pub window: usize,
    /// Window stride `h_s` in pixels.
    pub stride: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window: 16, stride: 4 }
    }
}

impl StftConfig {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        let cfg = Self { window, stride };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || self.stride == 0 || self.stride > self.window {
            return Err(Error::InvalidArgument(format!(
                "STFT needs 1 <= stride <= window and window >= 2, got window {} stride {}",
                self.window, self.stride
            )));
        }
        Ok(())
    }

    /// Number of windows `(K, L)` covering an `rows × cols` image.
    pub fn output_dims(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if self.window > rows.min(cols) {
            return Err(Error::InvalidShape {
                op: "stft",
                detail: format!("window {} larger than {rows}x{cols} image", self.window),
            });
        }
        Ok(((rows - self.window) / self.stride + 1, (cols - self.window) / self.stride + 1))
    }
}

/// `½(1 − cos(2πx/L))`, exact at the quarter turns.
fn hann_1d(x: usize, side: usize) -> Float {
    let (c, _) = dft::unit_root(x, side);
    0.5 * (1.0 - c)
}

/// Separable `L × L` Hann window.
#[derive(Debug, Clone, PartialEq)]
pub struct HannWindow {
    side: usize,
    values: Tensor,
}

impl HannWindow {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Window value at `(x, y)`; zero outside `[0, L)²`.
    pub fn value(&self, x: isize, y: isize) -> Float {
        let l = self.side as isize;
        if (0..l).contains(&x) && (0..l).contains(&y) {
            self.values.data()[x as usize * self.side + y as usize]
        } else {
            0.0
        }
    }
}

pub fn hann(side: usize) -> Result<HannWindow> {
    if side < 2 {
        return Err(Error::InvalidArgument(format!("Hann window side must be at least 2, got {side}")));
    }
    let profile: Vec<Float> = (0..side).map(|x| hann_1d(x, side)).collect();
    let values = Tensor::from_fn(&[side, side], |i| profile[i / side] * profile[i % side]);
    Ok(HannWindow { side, values })
}

/// Per-window spectra of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct StftTensor {
    /// `[K, L, h_l, h_l]` complex spectra.
    pub spectra: ComplexTensor,
    pub rows: usize,
    pub cols: usize,
    pub config: StftConfig,
}

impl StftTensor {
    /// `(K, L)`: window counts down and across.
    pub fn windows(&self) -> (usize, usize) {
        (self.spectra.shape()[0], self.spectra.shape()[1])
    }

    pub fn amplitude(&self) -> Tensor {
        amplitude(&self.spectra)
    }

    pub fn phase(&self) -> Tensor {
        phase(&self.spectra)
    }
}

/// Splits `[..., M, N]` into (leading count, M, N).
fn image_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::InvalidShape {
            op,
            detail: format!("expected [..., H, W], got {shape:?}"),
        });
    }
    let n = shape.len();
    Ok((shape[..n - 2].iter().product(), shape[n - 2], shape[n - 1]))
}

fn stft_forward(input: &Tensor, cfg: StftConfig) -> Result<(Vec<usize>, Vec<Float>, Vec<Float>)> {
    let (count, rows, cols) = image_dims(input.shape(), "stft")?;
    let (k, l) = cfg.output_dims(rows, cols)?;
    let h = cfg.window;
    let window = hann(h)?;
    let plan = Dft2d::new(h, h);
    let per_window = h * h;
    let total = count * k * l * per_window;
    let (mut re, mut im) = (Vec::with_capacity(total), Vec::with_capacity(total));
    let mut buf = vec![Cplx::new(0.0, 0.0); per_window];
    for img in input.data().chunks(rows * cols) {
        for a in 0..k {
            for b in 0..l {
                let (m0, n0) = (a * cfg.stride, b * cfg.stride);
                for x in 0..h {
                    for y in 0..h {
                        let v = img[(m0 + x) * cols + n0 + y] * window.values.data()[x * h + y];
                        buf[x * h + y] = Cplx::new(v, 0.0);
                    }
                }
                plan.transform(&mut buf, Direction::Forward);
                re.extend(buf.iter().map(|c| c.re));
                im.extend(buf.iter().map(|c| c.im));
            }
        }
    }
    let mut shape = input.shape()[..input.rank() - 2].to_vec();
    shape.extend_from_slice(&[k, l, h, h]);
    Ok((shape, re, im))
}

pub fn stft(image: &Tensor, cfg: StftConfig) -> Result<StftTensor> {
    let [rows, cols] = *image.shape() else {
        return Err(Error::InvalidShape {
            op: "stft",
            detail: format!("expected a single [M, N] image, got {:?}", image.shape()),
        });
    };
    let (shape, re, im) = stft_forward(image, cfg)?;
    Ok(StftTensor {
        spectra: ComplexTensor::new(Tensor::from_parts(shape.clone(), re), Tensor::from_parts(shape, im))?,
        rows,
        cols,
        config: cfg,
    })
}

fn transform_image(image: &Tensor, plan: &Dft2d, dir: Direction, scale: Float) -> Result<ComplexTensor> {
    let [rows, cols] = *image.shape() else {
        return Err(Error::InvalidShape {
            op: "dft2",
            detail: format!("expected [H, W], got {:?}", image.shape()),
        });
    };
    let mut buf: Vec<Cplx> = image.data().iter().map(|&x| Cplx::new(x, 0.0)).collect();
    plan.transform(&mut buf, dir);
    let shape = vec![rows, cols];
    ComplexTensor::new(
        Tensor::from_parts(shape.clone(), buf.iter().map(|c| c.re * scale).collect()),
        Tensor::from_parts(shape, buf.iter().map(|c| c.im * scale).collect()),
    )
}

/// Global 2D DFT with orthonormal scaling `1/√(HW)`.
pub fn dft2(image: &Tensor) -> Result<ComplexTensor> {
    let (_, rows, cols) = image_dims(image.shape(), "dft2")?;
    transform_image(image, &Dft2d::new(rows, cols), Direction::Forward, orthonormal_scale(rows, cols))
}

/// Inverse of [`dft2`].
pub fn idft2(spectrum: &ComplexTensor) -> Result<ComplexTensor> {
    let [rows, cols] = *spectrum.shape() else {
        return Err(Error::InvalidShape {
            op: "idft2",
            detail: format!("expected [H, W], got {:?}", spectrum.shape()),
        });
    };
    let mut buf: Vec<Cplx> = spectrum
        .re()
        .data()
        .iter()
        .zip(spectrum.im().data())
        .map(|(&r, &i)| Cplx::new(r, i))
        .collect();
    Dft2d::new(rows, cols).transform(&mut buf, Direction::Inverse);
    let s = orthonormal_scale(rows, cols);
    let shape = vec![rows, cols];
    ComplexTensor::new(
        Tensor::from_parts(shape.clone(), buf.iter().map(|c| c.re * s).collect()),
        Tensor::from_parts(shape, buf.iter().map(|c| c.im * s).collect()),
    )
}

/// Unnormalized radix-2 2D FFT; same convention as the per-window STFT
/// transform. Dimensions that are not powers of two are rejected.
pub fn fft2_pow2(image: &Tensor) -> Result<ComplexTensor> {
    let (_, rows, cols) = image_dims(image.shape(), "fft2_pow2")?;
    if !rows.is_power_of_two() || !cols.is_power_of_two() {
        return Err(Error::InvalidShape {
            op: "fft2_pow2",
            detail: format!("{rows}x{cols} is not a power-of-two size"),
        });
    }
    transform_image(image, &Dft2d::new(rows, cols), Direction::Forward, 1.0)
}

/// Unnormalized 2D DFT by direct summation along each axis, for any size.
pub fn dft2_unnormalized(image: &Tensor) -> Result<ComplexTensor> {
    let (_, rows, cols) = image_dims(image.shape(), "dft2_unnormalized")?;
    transform_image(image, &Dft2d::naive(rows, cols), Direction::Forward, 1.0)
}

fn orthonormal_scale(rows: usize, cols: usize) -> Float {
    1.0 / ((rows * cols) as Float).sqrt()
}

/// Elementwise modulus `√(re² + im²)`.
pub fn amplitude(f: &ComplexTensor) -> Tensor {
    f.re().zip_map(f.im(), "amplitude", Float::hypot).expect("complex parts share a shape")
}

/// Elementwise `atan2(im, re)` in `(-π, π]`, with the origin mapped to 0.
pub fn phase(f: &ComplexTensor) -> Tensor {
    f.im().zip_map(f.re(), "phase", principal_atan2).expect("complex parts share a shape")
}

/// Per-bin weights that grow linearly with radial frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyWeights {
    pub grid: Tensor,
    pub floor: Float,
}

/// Signed frequency of DFT bin `u` out of `n`, in `[-n/2, n/2)`.
fn wrapped(u: usize, n: usize) -> Float {
    if 2 * u < n {
        u as Float
    } else {
        u as Float - n as Float
    }
}

/// Euclidean norm of the wrapped frequency indices of every bin.
pub fn radial_frequency(rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(&[rows, cols], |i| wrapped(i / cols, rows).hypot(wrapped(i % cols, cols)))
}

/// `w_min + (1 − w_min)·r/r_max` over a square `side × side` spectrum.
pub fn frequency_weights(side: usize, w_min: Float) -> Result<FrequencyWeights> {
    frequency_weights_rect(side, side, w_min)
}

pub fn frequency_weights_rect(rows: usize, cols: usize, w_min: Float) -> Result<FrequencyWeights> {
    if !(0.0..=1.0).contains(&w_min) {
        return Err(Error::InvalidArgument(format!("weight floor must lie in [0, 1], got {w_min}")));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    let radius = radial_frequency(rows, cols);
    let r_max = radius.data().iter().copied().fold(0.0, Float::max);
    let grid = if r_max > 0.0 {
        radius.map(|r| w_min + (1.0 - w_min) * r / r_max)
    } else {
        Tensor::full(&[rows, cols], 1.0)
    };
    Ok(FrequencyWeights { grid, floor: w_min })
}

/// Tape form of the STFT: `[..., M, N] → [2, ..., K, L, h_l, h_l]`, real
/// parts first.
#[derive(Debug)]
struct StftMap {
    cfg: StftConfig,
}

impl LinearMap for StftMap {
    fn apply(&self, input: &Tensor) -> Result<Tensor> {
        let (shape, mut re, im) = stft_forward(input, self.cfg)?;
        re.extend(im);
        let mut stacked = vec![2];
        stacked.extend(shape);
        Ok(Tensor::from_parts(stacked, re))
    }

    fn adjoint(&self, grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
        let (count, rows, cols) = image_dims(input_shape, "stft")?;
        let (k, l) = self.cfg.output_dims(rows, cols)?;
        let h = self.cfg.window;
        let window = hann(h)?;
        let plan = Dft2d::new(h, h);
        let per_window = h * h;
        let half = grad_out.len() / 2;
        let (g_re, g_im) = grad_out.data().split_at(half);
        let mut grad = vec![0.0; count * rows * cols];
        let mut buf = vec![Cplx::new(0.0, 0.0); per_window];
        let mut w_idx = 0;
        for img in grad.chunks_mut(rows * cols) {
            for a in 0..k {
                for b in 0..l {
                    let off = w_idx * per_window;
                    for (j, slot) in buf.iter_mut().enumerate() {
                        *slot = Cplx::new(g_re[off + j], g_im[off + j]);
                    }
                    // d/dx of Σ g_re·Re F + g_im·Im F is Re(Σ G e^{+iθ}) times the window.
                    plan.transform(&mut buf, Direction::Inverse);
                    let (m0, n0) = (a * self.cfg.stride, b * self.cfg.stride);
                    for x in 0..h {
                        for y in 0..h {
                            img[(m0 + x) * cols + n0 + y] += buf[x * h + y].re * window.values.data()[x * h + y];
                        }
                    }
                    w_idx += 1;
                }
            }
        }
        Ok(Tensor::from_parts(input_shape.to_vec(), grad))
    }
}

/// Tape form of [`dft2`]: `[..., H, W] → [2, ..., H, W]`.
#[derive(Debug)]
struct Dft2Map;

impl LinearMap for Dft2Map {
    fn apply(&self, input: &Tensor) -> Result<Tensor> {
        batched_dft(input, Direction::Forward)
    }

    fn adjoint(&self, grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
        let full = batched_inverse_real(grad_out, input_shape)?;
        Ok(full)
    }
}

fn batched_dft(input: &Tensor, dir: Direction) -> Result<Tensor> {
    let (_, rows, cols) = image_dims(input.shape(), "dft2")?;
    let plan = Dft2d::new(rows, cols);
    let s = orthonormal_scale(rows, cols);
    let mut re = Vec::with_capacity(input.len());
    let mut im = Vec::with_capacity(input.len());
    let mut buf = vec![Cplx::new(0.0, 0.0); rows * cols];
    for img in input.data().chunks(rows * cols) {
        for (slot, &x) in buf.iter_mut().zip(img) {
            *slot = Cplx::new(x, 0.0);
        }
        plan.transform(&mut buf, dir);
        re.extend(buf.iter().map(|c| c.re * s));
        im.extend(buf.iter().map(|c| c.im * s));
    }
    re.extend(im);
    let mut shape = vec![2];
    shape.extend_from_slice(input.shape());
    Ok(Tensor::from_parts(shape, re))
}

fn batched_inverse_real(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let (_, rows, cols) = image_dims(input_shape, "dft2")?;
    let plan = Dft2d::new(rows, cols);
    let s = orthonormal_scale(rows, cols);
    let half = grad_out.len() / 2;
    let (g_re, g_im) = grad_out.data().split_at(half);
    let mut grad = Vec::with_capacity(half);
    let mut buf = vec![Cplx::new(0.0, 0.0); rows * cols];
    for (re, im) in g_re.chunks(rows * cols).zip(g_im.chunks(rows * cols)) {
        for ((slot, &r), &i) in buf.iter_mut().zip(re).zip(im) {
            *slot = Cplx::new(r, i);
        }
        plan.transform(&mut buf, Direction::Inverse);
        grad.extend(buf.iter().map(|c| c.re * s));
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), grad))
}

/// Records the STFT of `[..., M, N]` images; returns `(re, im)` of shape
/// `[..., K, L, h_l, h_l]`.
pub fn stft_var(images: &Var, cfg: StftConfig) -> Result<(Var, Var)> {
    let stacked = images.linear(Rc::new(StftMap { cfg }))?;
    Ok((stacked.select(0)?, stacked.select(1)?))
}

/// Records the orthonormal global DFT of `[..., H, W]` images.
pub fn dft2_var(images: &Var) -> Result<(Var, Var)> {
    let stacked = images.linear(Rc::new(Dft2Map))?;
    Ok((stacked.select(0)?, stacked.select(1)?))
}
