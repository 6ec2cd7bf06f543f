use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{psnr, ssim, LossConfig};
use crate::tensor::Float;
use crate::vae::Vae;

/// Mean reconstruction quality over a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub psnr: Float,
    pub ssim: Float,
    pub count: usize,
}

/// Anything that maps a batch of `[B, 1, H, W]` images to reconstructions
/// in `[0, 1]` of the same shape.
pub trait Reconstructor {
    fn reconstruct(&self, batch: &crate::tensor::Tensor) -> Result<crate::tensor::Tensor>;
}

impl Reconstructor for Vae {
    /// Posterior mean decoding (`ε = 0`).
    fn reconstruct(&self, batch: &crate::tensor::Tensor) -> Result<crate::tensor::Tensor> {
        Vae::reconstruct(self, batch)
    }
}

/// Per-image PSNR and SSIM between each image and its reconstruction,
/// averaged over the split. Each image is scored on its own, so the result
/// does not depend on `batch_size`.
pub fn evaluate(model: &dyn Reconstructor, data: &Dataset, batch_size: usize, loss: &LossConfig) -> Result<Metrics> {
    if batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be positive".into()));
    }
    let (h, w) = data.image_dims();
    let (mut psnr_sum, mut ssim_sum) = (0.0, 0.0);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let x = data.batch(chunk)?;
        let y = model.reconstruct(&x)?;
        for i in 0..chunk.len() {
            let a = x.index_axis0(i)?.into_reshape(&[h, w])?;
            let b = y.index_axis0(i)?.into_reshape(&[h, w])?;
            psnr_sum += psnr(&a, &b, loss.data_range)?;
            ssim_sum += ssim(&a, &b, loss)?;
        }
    }
    let n = data.len() as Float;
    Ok(Metrics {
        psnr: psnr_sum / n,
        ssim: ssim_sum / n,
        count: data.len(),
    })
}

/// The `λ_freq` that puts the frequency term on the same scale as DSSIM:
/// mean DSSIM over mean frequency loss between `data` and `model`'s
/// reconstructions. `None` when the frequency loss vanishes.
pub fn calibrate_lambda_freq(model: &dyn Reconstructor, data: &Dataset, loss: &LossConfig) -> Result<Option<Float>> {
    let (h, w) = data.image_dims();
    let (mut d_sum, mut f_sum) = (0.0, 0.0);
    for i in 0..data.len() {
        let x = data.batch(&[i])?;
        let y = model.reconstruct(&x)?;
        let (a, b) = (x.into_reshape(&[h, w])?, y.into_reshape(&[h, w])?);
        d_sum += crate::losses::dssim(&a, &b, loss)?;
        f_sum += crate::losses::freq_loss(&a, &b, loss)?;
    }
    Ok((f_sum > 0.0).then(|| d_sum / f_sum))
}
