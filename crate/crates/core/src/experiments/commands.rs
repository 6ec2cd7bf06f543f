use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::blur::{blur_demo, default_band_split, BlurDemo};
use super::config::{Preset, RunConfig};
use super::eval::evaluate;
use super::train::{train_model, write_train_log, EpochLog};
use crate::data::{binarize, load_idx, load_mnist, read_png, write_grid_png, Binarization, Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::tensor::{Float, Tensor};
use crate::vae::{load_checkpoint, save_checkpoint, Fingerprint, Vae};

const CHECKPOINT: &str = "checkpoint.bin";
const EVAL_BATCH: usize = 100;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn grid_cols(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(1)
}

/// Loads a split with the run's binarization, then cuts it to the subset
/// size. Precomputed rows cover the full split, so cutting comes last.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Dataset> {
    let (enabled, precomputed, subset) = match split {
        Split::Train => (cfg.binarize_train, &cfg.binarized_train_path, cfg.subset),
        Split::Test => (cfg.binarize_test, &cfg.binarized_test_path, cfg.test_subset),
    };
    let mut data = load_mnist(&cfg.data_dir, split)?;
    if enabled {
        let mode = precomputed.clone().map_or(Binarization::Threshold, Binarization::Precomputed);
        data = binarize(&data, &mode)?;
    }
    match subset {
        Some(n) => data.take(n),
        None => Ok(data),
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub run_dir: PathBuf,
    pub log: Vec<EpochLog>,
    pub model: Vae,
}

/// Trains one run and writes `config.toml`, `train_log.csv`,
/// `checkpoint.bin` and `samples.png` into its run directory.
pub fn cmd_train(cfg: &RunConfig, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainReport> {
    cfg.validate()?;
    let data = load_split(cfg, Split::Train)?;
    let run_dir = cfg.run_dir();
    create_dir(&run_dir)?;
    write_text(&run_dir.join("config.toml"), &cfg.to_toml())?;
    let outcome = train_model(cfg, &data, Some(&run_dir), on_epoch)?;
    write_train_log(&run_dir.join("train_log.csv"), &outcome.log)?;
    save_checkpoint(&run_dir.join(CHECKPOINT), &outcome.model, cfg.fingerprint())?;
    if cfg.samples > 0 {
        let samples = outcome.model.generate(cfg.samples, cfg.seed)?;
        write_grid_png(&samples, grid_cols(cfg.samples), &run_dir.join("samples.png"))?;
    }
    Ok(TrainReport {
        run_dir,
        log: outcome.log,
        model: outcome.model,
    })
}

/// One evaluated run. Serializes to `loss_name,psnr,ssim,epochs,seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub loss_name: String,
    pub psnr: Float,
    pub ssim: Float,
    pub epochs: usize,
    pub seed: u64,
    #[serde(skip)]
    pub count: usize,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct EvalCache {
    fingerprint: String,
    count: usize,
    row: MetricsRow,
}

fn metrics_row(cfg: &RunConfig, model: &Vae) -> Result<MetricsRow> {
    let started = Instant::now();
    let test = load_split(cfg, Split::Test)?;
    let m = evaluate(model, &test, EVAL_BATCH, &cfg.loss_config())?;
    Ok(MetricsRow {
        loss_name: cfg.preset.name().to_string(),
        psnr: m.psnr,
        ssim: m.ssim,
        epochs: cfg.epochs,
        seed: cfg.seed,
        count: m.count,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn store_metrics(cfg: &RunConfig, row: &MetricsRow) -> Result<()> {
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    write_rows(&dir.join("metrics.csv"), std::slice::from_ref(row))?;
    let cache = EvalCache {
        fingerprint: cfg.eval_fingerprint().to_string(),
        count: row.count,
        row: row.clone(),
    };
    let text = toml::to_string(&cache).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&dir.join("eval_cache.toml"), &text)
}

fn cached_metrics(cfg: &RunConfig) -> Option<MetricsRow> {
    let text = fs::read_to_string(cfg.run_dir().join("eval_cache.toml")).ok()?;
    let cache: EvalCache = toml::from_str(&text).ok()?;
    (cache.fingerprint == cfg.eval_fingerprint().to_string()).then_some(MetricsRow {
        count: cache.count,
        ..cache.row
    })
}

/// Mean test PSNR/SSIM of a checkpoint with posterior-mean decoding. The
/// checkpoint defaults to the run directory's and must match `cfg`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<MetricsRow> {
    cfg.validate()?;
    let default = cfg.run_dir().join(CHECKPOINT);
    let path = checkpoint.unwrap_or(&default);
    let model = load_checkpoint(path, Some(cfg.fingerprint()))?;
    let row = metrics_row(cfg, &model)?;
    store_metrics(cfg, &row)?;
    Ok(row)
}

/// Per-preset means over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PresetSummary {
    pub loss_name: String,
    pub psnr: Float,
    pub ssim: Float,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<MetricsRow>,
    pub summary: Vec<PresetSummary>,
}

impl CompareReport {
    pub fn mean_for(&self, preset: Preset) -> Option<&PresetSummary> {
        self.summary.iter().find(|s| s.loss_name == preset.name())
    }
}

fn existing_model(cfg: &RunConfig) -> Option<Vae> {
    load_checkpoint(&cfg.run_dir().join(CHECKPOINT), Some(cfg.fingerprint())).ok()
}

/// Evaluates every preset and seed on top of `base`, reusing finished runs
/// whose fingerprint matches. Missing runs are trained when `train` is set
/// and reported otherwise. Writes `compare.csv`, `summary.csv` and one
/// `samples_<preset>.png` grid per preset into `base.out_dir`.
pub fn cmd_compare(
    base: &RunConfig,
    presets: &[Preset],
    seeds: &[u64],
    train: bool,
    on_epoch: &mut dyn FnMut(&RunConfig, &EpochLog),
) -> Result<CompareReport> {
    if presets.is_empty() || seeds.is_empty() {
        return Err(Error::Config("compare needs at least one preset and one seed".into()));
    }
    let configs: Vec<RunConfig> = presets
        .iter()
        .flat_map(|&preset| {
            seeds.iter().map(move |&seed| RunConfig {
                preset,
                seed,
                ..base.clone()
            })
        })
        .collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    if !train {
        let mut missing: Vec<String> = Vec::new();
        for cfg in &configs {
            if cached_metrics(cfg).is_none() && existing_model(cfg).is_none() {
                missing.push(format!("{} (seed {})", cfg.preset.name(), cfg.seed));
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingRuns(missing));
        }
    }

    let mut rows = Vec::with_capacity(configs.len());
    let mut summary = Vec::with_capacity(presets.len());
    create_dir(&base.out_dir)?;
    for &preset in presets {
        let mut grid_model: Option<Vae> = None;
        let mut preset_rows = Vec::with_capacity(seeds.len());
        for cfg in configs.iter().filter(|c| c.preset == preset) {
            let model = match existing_model(cfg) {
                Some(m) => m,
                None if train => cmd_train(cfg, &mut |e| on_epoch(cfg, e))?.model,
                None => {
                    return Err(Error::MissingRuns(vec![format!("{} (seed {})", preset.name(), cfg.seed)]));
                }
            };
            let row = match cached_metrics(cfg) {
                Some(row) => row,
                None => {
                    let row = metrics_row(cfg, &model)?;
                    store_metrics(cfg, &row)?;
                    row
                }
            };
            grid_model.get_or_insert(model);
            preset_rows.push(row);
        }
        let n = preset_rows.len() as Float;
        summary.push(PresetSummary {
            loss_name: preset.name().to_string(),
            psnr: preset_rows.iter().map(|r| r.psnr).sum::<Float>() / n,
            ssim: preset_rows.iter().map(|r| r.ssim).sum::<Float>() / n,
            runs: preset_rows.len(),
        });
        if let Some(model) = grid_model {
            let samples = model.generate(16, seeds[0])?;
            let path = base.out_dir.join(format!("samples_{}.png", preset.slug()));
            write_grid_png(&samples, 4, &path)?;
        }
        rows.extend(preset_rows);
    }
    write_rows(&base.out_dir.join("compare.csv"), &rows)?;
    write_rows(&base.out_dir.join("summary.csv"), &summary)?;
    Ok(CompareReport { rows, summary })
}

/// Decodes `n` prior samples into a PNG grid.
pub fn cmd_generate(
    checkpoint: &Path,
    expected: Option<Fingerprint>,
    n: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<Tensor>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let model = load_checkpoint(checkpoint, expected)?;
    let images = model.generate(n, seed)?;
    write_grid_png(&images, grid_cols(n), out)?;
    Ok(images)
}

/// Source image for the blur demonstration.
#[derive(Debug, Clone, PartialEq)]
pub enum BlurInput {
    Png(PathBuf),
    /// One image out of an IDX image file.
    Idx { path: PathBuf, index: usize },
}

impl BlurInput {
    pub fn load(&self) -> Result<Tensor> {
        match self {
            BlurInput::Png(path) => Ok(read_png(path)?.to_tensor()),
            BlurInput::Idx { path, index } => {
                let data = load_idx(path, None, Split::Test)?;
                if *index >= data.len() {
                    return Err(Error::InvalidArgument(format!(
                        "image index {index} out of range for {} ({} images)",
                        path.display(),
                        data.len()
                    )));
                }
                data.image(*index)
            }
        }
    }
}

/// Writes `a_original.png`, `b_blurred.png`, `c_band_reduced.png`,
/// `d_band_boosted.png` and `blur_report.csv` into `out_dir`.
pub fn cmd_blur_demo(
    input: &BlurInput,
    sigma: Float,
    band_split: Option<Float>,
    loss: &LossConfig,
    out_dir: &Path,
) -> Result<BlurDemo> {
    loss.validate()?;
    let image = input.load()?;
    let split = band_split.unwrap_or_else(|| default_band_split(image.shape()[0]));
    let demo = blur_demo(&image, sigma, split, loss)?;
    create_dir(out_dir)?;
    for (name, img) in [
        ("a_original.png", &demo.original),
        ("b_blurred.png", &demo.blurred),
        ("c_band_reduced.png", &demo.band_reduced),
        ("d_band_boosted.png", &demo.band_boosted),
    ] {
        write_grid_png(std::slice::from_ref(img), 1, &out_dir.join(name))?;
    }
    write_rows(&out_dir.join("blur_report.csv"), &demo.reports)?;
    Ok(demo)
}
