//! Invariants of the spectral, loss, data and checkpoint layers over random inputs.

// Tolerances here assume double precision.
#![cfg(not(feature = "f32"))]

use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stftvae::data::{parse_idx, IdxArray, IMAGES_MAGIC};
use stftvae::filter::gaussian_blur;
use stftvae::losses::{freq_loss, freq_terms, kl_divergence, psnr, ssim, FreqDomain, LatentDistribution, LossConfig};
use stftvae::spectral::{dft2, idft2, stft, StftConfig};
use stftvae::vae::{Checkpoint, Fingerprint, Vae};
use stftvae::{Float, Tensor};

fn image(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[rows, cols], |_| rng.random_range(0.0..1.0))
}

fn energy(t: &Tensor) -> Float {
    t.data().iter().map(|v| v * v).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dft2_is_unitary(seed in any::<u64>(), rows in 2usize..20, cols in 2usize..20) {
        let x = image(seed, rows, cols);
        let f = dft2(&x).unwrap();
        let spectral = energy(f.re()) + energy(f.im());
        prop_assert!((spectral - energy(&x)).abs() <= 1e-10 * energy(&x).max(1.0));
        let back = idft2(&f).unwrap();
        prop_assert!(back.re().max_abs_diff(&x).unwrap() < 1e-12);
        prop_assert!(back.im().data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn stft_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (x, y) = (image(seed, 28, 28), image(seed ^ 1, 28, 28));
        let cfg = StftConfig::default();
        let mixed = x.scale(a as Float).add(&y.scale(b as Float)).unwrap();
        let lhs = stft(&mixed, cfg).unwrap().spectra;
        let (sx, sy) = (stft(&x, cfg).unwrap().spectra, stft(&y, cfg).unwrap().spectra);
        let re = sx.re().scale(a as Float).add(&sy.re().scale(b as Float)).unwrap();
        let im = sx.im().scale(a as Float).add(&sy.im().scale(b as Float)).unwrap();
        prop_assert!(lhs.re().max_abs_diff(&re).unwrap() < 1e-10);
        prop_assert!(lhs.im().max_abs_diff(&im).unwrap() < 1e-10);
    }

    #[test]
    fn freq_loss_is_a_symmetric_nonnegative_discrepancy(seed in any::<u64>(), global in any::<bool>()) {
        let cfg = LossConfig {
            freq_domain: if global { FreqDomain::Global } else { FreqDomain::Stft },
            ..LossConfig::default()
        };
        let (x, y) = (image(seed, 28, 28), image(seed.wrapping_add(7), 28, 28));
        let xy = freq_terms(&x, &y, &cfg).unwrap();
        let yx = freq_terms(&y, &x, &cfg).unwrap();
        prop_assert!(xy.phase > 0.0 && xy.amplitude > 0.0);
        prop_assert!((xy.phase - yx.phase).abs() <= 1e-9 * xy.phase);
        prop_assert!((xy.amplitude - yx.amplitude).abs() <= 1e-9 * xy.amplitude);
        prop_assert_eq!(freq_loss(&x, &x, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>()) {
        let cfg = LossConfig::default();
        let (x, y) = (image(seed, 28, 28), image(!seed, 28, 28));
        let (a, b) = (ssim(&x, &y, &cfg).unwrap(), ssim(&y, &x, &cfg).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
        prop_assert!(a < 1.0);
    }

    #[test]
    fn kl_is_nonnegative(seed in any::<u64>(), batch in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = Tensor::from_fn(&[batch, 2], |_| rng.random_range(-3.0..3.0));
        let lv = Tensor::from_fn(&[batch, 2], |_| rng.random_range(-3.0..3.0));
        prop_assert!(kl_divergence(&LatentDistribution::new(mu, lv).unwrap()).unwrap() >= 0.0);
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed in any::<u64>(), small in 0.01f64..0.1) {
        let x = image(seed, 16, 16);
        let noise = image(seed ^ 3, 16, 16).add_scalar(-0.5);
        let near = x.add(&noise.scale(small as Float)).unwrap();
        let far = x.add(&noise.scale(2.0 * small as Float)).unwrap();
        prop_assert!(psnr(&x, &near, 1.0).unwrap() > psnr(&x, &far, 1.0).unwrap());
    }

    #[test]
    fn blur_keeps_constants(value in 0.0f64..1.0, sigma in 0.3f64..3.0) {
        let flat = Tensor::full(&[12, 9], value as Float);
        let blurred = gaussian_blur(&flat, sigma as Float).unwrap();
        prop_assert!(blurred.max_abs_diff(&flat).unwrap() < 1e-12);
    }

    #[test]
    fn idx_round_trips(dims in prop::collection::vec(1usize..6, 1..4), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let array = IdxArray { dims: dims.clone(), bytes: (0..n).map(|_| rng.random()).collect() };
        let magic = 0x0800 | dims.len() as u32;
        let bytes = array.to_bytes();
        prop_assert_eq!(bytes.len(), 4 + 4 * dims.len() + n);
        let parsed = parse_idx(&bytes, magic, Path::new("mem")).unwrap();
        prop_assert_eq!(&parsed, &array);
        prop_assert_eq!(parsed.to_bytes(), bytes);
        if dims.len() != 3 {
            prop_assert!(parse_idx(&array.to_bytes(), IMAGES_MAGIC, Path::new("mem")).is_err());
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>()) {
        let model = Vae::new(seed);
        let fp = Fingerprint::of(&seed.to_le_bytes());
        let bytes = Checkpoint::from_model(&model, fp).to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back.fingerprint, fp);
        let restored = back.into_model().unwrap();
        prop_assert_eq!(restored.params(), model.params());
    }
}
