//! Local-phase demonstration: blur an image, then swap the energy of its
//! high-frequency band between the sharp and the blurred version.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::losses::{freq_terms, LossConfig};
use crate::spectral::{dft2, idft2, radial_frequency};
use crate::tensor::{ComplexTensor, Float, Tensor};

#[derive(Debug, Clone)]
pub struct BlurDemo {
    /// (a) the input.
    pub original: Tensor,
    /// (b) Gaussian-blurred input.
    pub blurred: Tensor,
    /// (c) input with its high band scaled down to (b)'s band energy.
    pub band_reduced: Tensor,
    /// (d) blurred image with its high band scaled up to (a)'s band energy.
    pub band_boosted: Tensor,
    pub reports: Vec<LossReport>,
}

/// Frequency loss of one variant against the original.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub variant: &'static str,
    pub total: Float,
    pub phase: Float,
    pub amplitude: Float,
}

fn band_mask(rows: usize, cols: usize, split: Float) -> Vec<bool> {
    radial_frequency(rows, cols).data().iter().map(|&r| r > split).collect()
}

/// L2 norm of the spectrum restricted to `mask`.
pub fn band_energy(spectrum: &ComplexTensor, mask: &[bool]) -> Float {
    let (re, im) = (spectrum.re().data(), spectrum.im().data());
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| re[i] * re[i] + im[i] * im[i])
        .sum::<Float>()
        .sqrt()
}

fn scale_band(image: &Tensor, spectrum: &ComplexTensor, mask: &[bool], gain: Float) -> Result<Tensor> {
    if gain == 1.0 {
        return Ok(image.clone());
    }
    let (mut re, mut im) = spectrum.clone().into_parts();
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        re.data_mut()[i] *= gain;
        im.data_mut()[i] *= gain;
    }
    Ok(idft2(&ComplexTensor::new(re, im)?)?.into_parts().0)
}

/// Builds the four variants of a `[H, W]` image and scores (b), (c), (d)
/// against (a). `band_split` is the wrapped radius above which a bin counts
/// as high frequency.
pub fn blur_demo(image: &Tensor, sigma: Float, band_split: Float, loss: &LossConfig) -> Result<BlurDemo> {
    let [rows, cols] = *image.shape() else {
        return Err(Error::InvalidShape {
            op: "blur_demo",
            detail: format!("expected one [H, W] image, got {:?}", image.shape()),
        });
    };
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!("blur sigma must be positive, got {sigma}")));
    }
    let blurred = gaussian_blur(image, sigma)?;
    let mask = band_mask(rows, cols, band_split);
    let (fa, fb) = (dft2(image)?, dft2(&blurred)?);
    let (ea, eb) = (band_energy(&fa, &mask), band_energy(&fb, &mask));
    let (down, up) = if ea > 0.0 && eb > 0.0 { (eb / ea, ea / eb) } else { (1.0, 1.0) };
    let band_reduced = scale_band(image, &fa, &mask, down)?;
    let band_boosted = scale_band(&blurred, &fb, &mask, up)?;

    let mut reports = Vec::with_capacity(3);
    for (variant, img) in [("blurred", &blurred), ("band_reduced", &band_reduced), ("band_boosted", &band_boosted)] {
        let t = freq_terms(image, img, loss)?;
        reports.push(LossReport {
            variant,
            total: loss.lambda_phase * t.phase + t.amplitude,
            phase: t.phase,
            amplitude: t.amplitude,
        });
    }
    Ok(BlurDemo {
        original: image.clone(),
        blurred,
        band_reduced,
        band_boosted,
        reports,
    })
}

/// Default high-band threshold: a quarter of the image side.
pub fn default_band_split(rows: usize) -> Float {
    rows as Float / 4.0
}
