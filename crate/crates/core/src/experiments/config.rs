use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{FreqDomain, LossConfig, PixelLoss};
use crate::optim::{CyclePolicy, CyclicalSchedule};
use crate::spectral::StftConfig;
use crate::tensor::Float;
use crate::vae::Fingerprint;

/// The five reconstruction objectives compared in the results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "L1")]
    L1,
    #[serde(rename = "L2")]
    L2,
    #[serde(rename = "SSIM")]
    Ssim,
    #[serde(rename = "DFT+SSIM")]
    DftSsim,
    #[serde(rename = "STFT")]
    Stft,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::L1, Preset::L2, Preset::Ssim, Preset::DftSsim, Preset::Stft];

    pub fn name(self) -> &'static str {
        match self {
            Preset::L1 => "L1",
            Preset::L2 => "L2",
            Preset::Ssim => "SSIM",
            Preset::DftSsim => "DFT+SSIM",
            Preset::Stft => "STFT",
        }
    }

    /// Filesystem-friendly form of the name.
    pub fn slug(self) -> &'static str {
        match self {
            Preset::L1 => "l1",
            Preset::L2 => "l2",
            Preset::Ssim => "ssim",
            Preset::DftSsim => "dft_ssim",
            Preset::Stft => "stft",
        }
    }

    pub fn loss_config(self) -> LossConfig {
        let base = LossConfig::default();
        match self {
            Preset::L1 => LossConfig {
                pixel_loss: PixelLoss::L1,
                lambda_freq: 0.0,
                ..base
            },
            Preset::L2 => LossConfig {
                pixel_loss: PixelLoss::L2,
                lambda_freq: 0.0,
                ..base
            },
            Preset::Ssim => LossConfig {
                lambda_freq: 0.0,
                ..base
            },
            Preset::DftSsim => LossConfig {
                freq_domain: FreqDomain::Global,
                ..base
            },
            Preset::Stft => base,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        Preset::ALL
            .into_iter()
            .find(|p| p.slug().replace('_', "") == key)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}; expected one of L1, L2, SSIM, DFT+SSIM, STFT")))
    }
}

/// Everything that defines a run. Serialized as flat TOML next to its results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Train on the first `subset` training images only.
    pub subset: Option<usize>,
    /// Evaluate on the first `test_subset` test images only.
    pub test_subset: Option<usize>,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub binarize_train: bool,
    pub binarize_test: bool,
    /// Published binarized rows replacing thresholding, per split.
    pub binarized_train_path: Option<PathBuf>,
    pub binarized_test_path: Option<PathBuf>,
    pub min_lr: Float,
    pub max_lr: Float,
    pub step_size: usize,
    /// Horizon of the ceiling decay; runs longer than this extend it to their own length.
    pub total_iters: usize,
    pub cycle_policy: CyclePolicy,
    /// Images in the generated sample grid.
    pub samples: usize,
    pub lambda_phase: Option<Float>,
    pub lambda_freq: Option<Float>,
    pub beta: Option<Float>,
    pub w_min: Option<Float>,
    pub stft_window: Option<usize>,
    pub stft_stride: Option<usize>,
    pub wrap_phase: Option<bool>,
    pub pixel_loss: Option<PixelLoss>,
    pub ssim_window: Option<usize>,
    pub ssim_sigma: Option<Float>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sched = CyclicalSchedule::default();
        Self {
            preset: Preset::Stft,
            epochs: 50,
            batch_size: 50,
            seed: 0,
            subset: None,
            test_subset: None,
            data_dir: PathBuf::from("data/mnist"),
            out_dir: PathBuf::from("runs"),
            binarize_train: true,
            binarize_test: true,
            binarized_train_path: None,
            binarized_test_path: None,
            min_lr: sched.min_lr,
            max_lr: sched.max_lr,
            step_size: sched.step_size,
            total_iters: sched.total_iters,
            cycle_policy: sched.policy,
            samples: 16,
            lambda_phase: None,
            lambda_freq: None,
            beta: None,
            w_min: None,
            stft_window: None,
            stft_stride: None,
            wrap_phase: None,
            pixel_loss: None,
            ssim_window: None,
            ssim_sigma: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Preset defaults with every override applied.
    pub fn loss_config(&self) -> LossConfig {
        let mut c = self.preset.loss_config();
        c.lambda_phase = self.lambda_phase.unwrap_or(c.lambda_phase);
        c.lambda_freq = self.lambda_freq.unwrap_or(c.lambda_freq);
        c.beta = self.beta.unwrap_or(c.beta);
        c.w_min = self.w_min.unwrap_or(c.w_min);
        c.stft = StftConfig {
            window: self.stft_window.unwrap_or(c.stft.window),
            stride: self.stft_stride.unwrap_or(c.stft.stride),
        };
        c.wrap_phase = self.wrap_phase.unwrap_or(c.wrap_phase);
        c.pixel_loss = self.pixel_loss.unwrap_or(c.pixel_loss);
        c.ssim_window = self.ssim_window.unwrap_or(c.ssim_window);
        c.ssim_sigma = self.ssim_sigma.unwrap_or(c.ssim_sigma);
        c
    }

    pub fn schedule(&self, steps_per_epoch: usize) -> CyclicalSchedule {
        CyclicalSchedule {
            min_lr: self.min_lr,
            max_lr: self.max_lr,
            step_size: self.step_size,
            total_iters: self.total_iters.max(self.epochs * steps_per_epoch).max(1),
            policy: self.cycle_policy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.subset == Some(0) || self.test_subset == Some(0) {
            return Err(Error::Config("subset sizes must be positive".into()));
        }
        self.loss_config().validate()?;
        self.schedule(1).validate()
    }

    /// Hash of every setting that shapes the trained model. Paths and
    /// evaluation-only settings are excluded.
    pub fn fingerprint(&self) -> Fingerprint {
        let canonical = RunConfig {
            data_dir: PathBuf::new(),
            out_dir: PathBuf::new(),
            test_subset: None,
            binarize_test: true,
            binarized_test_path: None,
            samples: 0,
            ..self.clone()
        };
        Fingerprint::of(canonical.to_toml().as_bytes())
    }

    /// Training fingerprint extended with the evaluation settings.
    pub fn eval_fingerprint(&self) -> Fingerprint {
        let key = format!(
            "{}|{:?}|{}|{:?}",
            self.fingerprint(),
            self.test_subset,
            self.binarize_test,
            self.binarized_test_path.as_ref().map(|p| p.file_name().map(|n| n.to_os_string()))
        );
        Fingerprint::of(key.as_bytes())
    }

    /// `out_dir/<preset>_seed<seed>`.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(format!("{}_seed{}", self.preset.slug(), self.seed))
    }
}
