//! Reconstruction and regularization objectives.
//!
//! Every loss has a tape form (`*_var`, differentiable) and a plain form on
//! tensors. Images are `[..., H, W]`; leading axes are treated as a batch.
//! Frequency losses sum over bins and average over images, pixel losses and
//! SSIM average over pixels, and the KL term sums over latent dimensions and
//! averages over the batch.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::filter::SeparableFilter;
use crate::spectral::{dft2_var, frequency_weights, frequency_weights_rect, stft_var, StftConfig};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelLoss {
    L1,
    L2,
    SigmoidCe,
    Ssim,
}

/// Spectrum the frequency term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqDomain {
    /// Hann-windowed short-time transform.
    Stft,
    /// One orthonormal DFT over the whole image.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Phase weight `λ`, must exceed 1.
    pub lambda_phase: Float,
    /// Weight of the frequency term; 0 disables it.
    pub lambda_freq: Float,
    /// KL weight `β`.
    pub beta: Float,
    pub stft: StftConfig,
    /// Floor of the radial weight ramp.
    pub w_min: Float,
    pub pixel_loss: PixelLoss,
    pub freq_domain: FreqDomain,
    /// Compare phases modulo 2π instead of by raw difference.
    pub wrap_phase: bool,
    pub ssim_window: usize,
    pub ssim_sigma: Float,
    pub data_range: Float,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_phase: 2.0,
            lambda_freq: 1e-4,
            beta: 1.0,
            stft: StftConfig::default(),
            w_min: 0.1,
            pixel_loss: PixelLoss::Ssim,
            freq_domain: FreqDomain::Stft,
            wrap_phase: false,
            ssim_window: 7,
            ssim_sigma: 1.5,
            data_range: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.lambda_phase.is_finite() || self.lambda_phase <= 1.0 {
            return bad(format!("lambda_phase must be > 1, got {}", self.lambda_phase));
        }
        if !self.lambda_freq.is_finite() || self.lambda_freq < 0.0 {
            return bad(format!("lambda_freq must be >= 0, got {}", self.lambda_freq));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.w_min) {
            return bad(format!("w_min must lie in [0, 1], got {}", self.w_min));
        }
        if self.ssim_window.is_multiple_of(2) || self.ssim_sigma.is_nan() || self.ssim_sigma <= 0.0 {
            return bad(format!(
                "SSIM window must be odd with positive sigma, got {} / {}",
                self.ssim_window, self.ssim_sigma
            ));
        }
        if self.data_range.is_nan() || self.data_range <= 0.0 {
            return bad(format!("data_range must be positive, got {}", self.data_range));
        }
        self.stft.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Diagonal Gaussian posterior `q(z|x)`; `[latent]` or `[batch, latent]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl LatentDistribution {
    pub fn new(mu: Tensor, log_var: Tensor) -> Result<Self> {
        mu.check_same_shape(&log_var, "latent_distribution")?;
        if !mu.all_finite() || !log_var.all_finite() {
            return Err(Error::Domain {
                op: "latent_distribution",
                detail: "non-finite mean or log-variance".into(),
            });
        }
        Ok(Self { mu, log_var })
    }
}

fn check_pair(a: &Var, b: &Var, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if a.shape().len() < 2 {
        return Err(Error::InvalidShape {
            op,
            detail: format!("expected [..., H, W], got {:?}", a.shape()),
        });
    }
    Ok(())
}

/// Number of images in a `[..., H, W]` shape.
fn image_count(shape: &[usize]) -> usize {
    shape[..shape.len() - 2].iter().product()
}

/// Repeats `grid` so it covers `shape`, whose trailing axes match the grid.
fn tile(grid: &Tensor, shape: &[usize]) -> Tensor {
    let n = grid.len();
    Tensor::from_fn(shape, |i| grid.data()[i % n])
}

/// The two weighted sums making up the frequency loss.
#[derive(Debug, Clone)]
pub struct FreqTerms<T> {
    /// `Σ W·|P_o − P_i|`, averaged over images.
    pub phase: T,
    /// `Σ W·|A_o − A_i|`, averaged over images.
    pub amplitude: T,
}

pub fn freq_terms_var(s_i: &Var, s_o: &Var, cfg: &LossConfig) -> Result<FreqTerms<Var>> {
    check_pair(s_i, s_o, "freq_loss")?;
    let ((re_i, im_i), (re_o, im_o), weights) = match cfg.freq_domain {
        FreqDomain::Stft => {
            let w = frequency_weights(cfg.stft.window, cfg.w_min)?;
            (stft_var(s_i, cfg.stft)?, stft_var(s_o, cfg.stft)?, w.grid)
        }
        FreqDomain::Global => {
            let n = s_i.shape().len();
            let w = frequency_weights_rect(s_i.shape()[n - 2], s_i.shape()[n - 1], cfg.w_min)?;
            (dft2_var(s_i)?, dft2_var(s_o)?, w.grid)
        }
    };
    let tape = s_i.tape();
    let weights = tape.constant(tile(&weights, re_i.shape()));
    let per_image = 1.0 / image_count(s_i.shape()) as Float;

    let mut d_phase = im_o.atan2(&re_o)?.sub(&im_i.atan2(&re_i)?)?;
    if cfg.wrap_phase {
        d_phase = d_phase.wrap_angle();
    }
    let phase = d_phase.abs().mul(&weights)?.sum().scale(per_image);
    let d_amp = re_o.modulus(&im_o)?.sub(&re_i.modulus(&im_i)?)?;
    let amplitude = d_amp.abs().mul(&weights)?.sum().scale(per_image);
    Ok(FreqTerms { phase, amplitude })
}

/// `λ·phase + amplitude`.
pub fn freq_loss_var(s_i: &Var, s_o: &Var, cfg: &LossConfig) -> Result<Var> {
    let t = freq_terms_var(s_i, s_o, cfg)?;
    t.phase.scale(cfg.lambda_phase).add(&t.amplitude)
}

pub fn freq_terms(s_i: &Tensor, s_o: &Tensor, cfg: &LossConfig) -> Result<FreqTerms<Float>> {
    let tape = Tape::new();
    let t = freq_terms_var(&tape.constant(s_i.clone()), &tape.constant(s_o.clone()), cfg)?;
    Ok(FreqTerms {
        phase: t.phase.item(),
        amplitude: t.amplitude.item(),
    })
}

pub fn freq_loss(s_i: &Tensor, s_o: &Tensor, cfg: &LossConfig) -> Result<Float> {
    let t = freq_terms(s_i, s_o, cfg)?;
    Ok(cfg.lambda_phase * t.phase + t.amplitude)
}

/// Mean SSIM over all pixels of all images.
pub fn ssim_var(x: &Var, y: &Var, cfg: &LossConfig) -> Result<Var> {
    check_pair(x, y, "ssim")?;
    let n = x.shape().len();
    let filter = Rc::new(SeparableFilter::gaussian(
        x.shape()[n - 2],
        x.shape()[n - 1],
        cfg.ssim_window,
        cfg.ssim_sigma,
    )?);
    let smooth = |v: &Var| v.linear(filter.clone());
    let c1 = (0.01 * cfg.data_range).powi(2);
    let c2 = (0.03 * cfg.data_range).powi(2);

    let (mu_x, mu_y) = (smooth(x)?, smooth(y)?);
    let (mu_xx, mu_yy, mu_xy) = (mu_x.square(), mu_y.square(), mu_x.mul(&mu_y)?);
    let var_x = smooth(&x.square())?.sub(&mu_xx)?;
    let var_y = smooth(&y.square())?.sub(&mu_yy)?;
    let cov = smooth(&x.mul(y)?)?.sub(&mu_xy)?;

    let num = mu_xy.scale(2.0).add_scalar(c1).mul(&cov.scale(2.0).add_scalar(c2))?;
    let den = mu_xx.add(&mu_yy)?.add_scalar(c1).mul(&var_x.add(&var_y)?.add_scalar(c2))?;
    Ok(num.div(&den)?.mean())
}

/// `1 − ssim`.
pub fn dssim_var(x: &Var, y: &Var, cfg: &LossConfig) -> Result<Var> {
    Ok(ssim_var(x, y, cfg)?.neg().add_scalar(1.0))
}

pub fn ssim(x: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<Float> {
    let tape = Tape::new();
    Ok(ssim_var(&tape.constant(x.clone()), &tape.constant(y.clone()), cfg)?.item())
}

pub fn dssim(x: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<Float> {
    Ok(1.0 - ssim(x, y, cfg)?)
}

/// `10·log10(range²/MSE)` in decibels; identical inputs give `+∞`.
pub fn psnr(x: &Tensor, y: &Tensor, data_range: Float) -> Result<Float> {
    let diff = x.sub(y)?;
    let mse = diff.data().iter().map(|d| d * d).sum::<Float>() / diff.len() as Float;
    if mse == 0.0 {
        return Ok(Float::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

pub fn l1_var(x: &Var, y: &Var) -> Result<Var> {
    Ok(x.sub(y)?.abs().mean())
}

pub fn l2_var(x: &Var, y: &Var) -> Result<Var> {
    Ok(x.sub(y)?.square().mean())
}

pub fn sigmoid_ce_var(logits: &Var, targets: &Var) -> Result<Var> {
    logits.sigmoid_cross_entropy(targets)
}

pub fn l1(x: &Tensor, y: &Tensor) -> Result<Float> {
    Ok(x.sub(y)?.abs().mean())
}

pub fn l2(x: &Tensor, y: &Tensor) -> Result<Float> {
    Ok(x.sub(y)?.map(|d| d * d).mean())
}

pub fn sigmoid_ce(logits: &Tensor, targets: &Tensor) -> Result<Float> {
    let tape = Tape::new();
    Ok(sigmoid_ce_var(&tape.constant(logits.clone()), &tape.constant(targets.clone()))?.item())
}

/// `−½ Σ (1 + log σ² − μ² − σ²)`, summed over the last axis and averaged
/// over any leading ones.
pub fn kl_var(mu: &Var, log_var: &Var) -> Result<Var> {
    if mu.shape() != log_var.shape() || mu.shape().is_empty() {
        return Err(Error::ShapeMismatch {
            op: "kl_divergence",
            lhs: mu.shape().to_vec(),
            rhs: log_var.shape().to_vec(),
        });
    }
    let dims = mu.shape();
    let rows: usize = dims[..dims.len() - 1].iter().product();
    let inner = log_var.add_scalar(1.0).sub(&mu.square())?.sub(&log_var.exp())?;
    Ok(inner.sum().scale(-0.5 / rows as Float))
}

pub fn kl_divergence(q: &LatentDistribution) -> Result<Float> {
    let tape = Tape::new();
    Ok(kl_var(&tape.constant(q.mu.clone()), &tape.constant(q.log_var.clone()))?.item())
}

/// Every term of the VAE objective for one batch.
#[derive(Debug, Clone)]
pub struct LossTerms<T> {
    pub total: T,
    pub recons: T,
    pub kl: T,
    /// The pixel-space term (DSSIM, L1, L2 or cross-entropy).
    pub pixel: T,
    /// Frequency terms before `λ_freq`; absent when `λ_freq = 0`.
    pub freq: Option<FreqTerms<T>>,
}

impl LossTerms<Var> {
    pub fn values(&self) -> LossTerms<Float> {
        LossTerms {
            total: self.total.item(),
            recons: self.recons.item(),
            kl: self.kl.item(),
            pixel: self.pixel.item(),
            freq: self.freq.as_ref().map(|f| FreqTerms {
                phase: f.phase.item(),
                amplitude: f.amplitude.item(),
            }),
        }
    }
}

/// Reconstruction terms; `output` is the image in `[0, 1]` and `logits` its
/// pre-sigmoid form, which only the cross-entropy pixel loss reads.
fn recons_parts(
    target: &Var,
    output: &Var,
    logits: Option<&Var>,
    cfg: &LossConfig,
) -> Result<(Var, Var, Option<FreqTerms<Var>>)> {
    check_pair(target, output, "recons_loss")?;
    let pixel = match cfg.pixel_loss {
        PixelLoss::L1 => l1_var(output, target)?,
        PixelLoss::L2 => l2_var(output, target)?,
        PixelLoss::Ssim => dssim_var(target, output, cfg)?,
        PixelLoss::SigmoidCe => {
            let logits = logits.ok_or_else(|| {
                Error::InvalidArgument("sigmoid cross-entropy needs decoder logits, not images".into())
            })?;
            sigmoid_ce_var(logits, target)?
        }
    };
    if cfg.lambda_freq == 0.0 {
        return Ok((pixel.clone(), pixel, None));
    }
    let freq = freq_terms_var(target, output, cfg)?;
    let weighted = freq.phase.scale(cfg.lambda_phase).add(&freq.amplitude)?;
    let recons = weighted.scale(cfg.lambda_freq).add(&pixel)?;
    Ok((recons, pixel, Some(freq)))
}

/// `λ_freq·L_freq + pixel term` between target images and reconstructions.
pub fn recons_loss_var(s_i: &Var, s_o: &Var, cfg: &LossConfig) -> Result<Var> {
    Ok(recons_parts(s_i, s_o, None, cfg)?.0)
}

pub fn recons_loss(s_i: &Tensor, s_o: &Tensor, cfg: &LossConfig) -> Result<Float> {
    let tape = Tape::new();
    Ok(recons_loss_var(&tape.constant(s_i.clone()), &tape.constant(s_o.clone()), cfg)?.item())
}

/// Full objective `β·KL + recons` from decoder logits.
pub fn vae_objective(
    target: &Var,
    logits: &Var,
    mu: &Var,
    log_var: &Var,
    cfg: &LossConfig,
) -> Result<LossTerms<Var>> {
    let output = logits.sigmoid();
    objective(target, &output, Some(logits), mu, log_var, cfg)
}

fn objective(
    target: &Var,
    output: &Var,
    logits: Option<&Var>,
    mu: &Var,
    log_var: &Var,
    cfg: &LossConfig,
) -> Result<LossTerms<Var>> {
    let (recons, pixel, freq) = recons_parts(target, output, logits, cfg)?;
    let kl = kl_var(mu, log_var)?;
    let total = kl.scale(cfg.beta).add(&recons)?;
    Ok(LossTerms {
        total,
        recons,
        kl,
        pixel,
        freq,
    })
}

/// `β·KL(q) + recons(S_i, S_o)` on images.
pub fn total_loss_var(s_i: &Var, s_o: &Var, mu: &Var, log_var: &Var, cfg: &LossConfig) -> Result<Var> {
    Ok(objective(s_i, s_o, None, mu, log_var, cfg)?.total)
}

pub fn total_loss(s_i: &Tensor, s_o: &Tensor, q: &LatentDistribution, cfg: &LossConfig) -> Result<Float> {
    let tape = Tape::new();
    let c = |t: &Tensor| tape.constant(t.clone());
    Ok(total_loss_var(&c(s_i), &c(s_o), &c(&q.mu), &c(&q.log_var), cfg)?.item())
}
