use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::RunConfig;
use crate::autodiff::Tape;
use crate::data::{BatchIterator, Dataset};
use crate::error::{Error, Result};
use crate::losses::vae_objective;
use crate::optim::Adam;
use crate::tensor::{Float, Tensor};
use crate::vae::{reparameterize_var, sample_noise, save_checkpoint, Vae};

/// Epoch means of every objective term. Frequency columns are empty when
/// the preset has no frequency term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: Float,
    pub recons: Float,
    pub kl: Float,
    pub pixel: Float,
    pub freq_phase: Option<Float>,
    pub freq_amplitude: Option<Float>,
    pub lr: Float,
    /// Wall time, kept out of the CSV so logs stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Vae,
    pub log: Vec<EpochLog>,
}

/// Independent random streams derived from the run seed.
pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Default)]
struct Accum {
    n: usize,
    total: Float,
    recons: Float,
    kl: Float,
    pixel: Float,
    phase: Float,
    amplitude: Float,
    has_freq: bool,
}

/// Trains a fresh model on `data`. When `run_dir` is given, the last finite
/// parameters are saved there before a non-finite loss aborts the run.
pub fn train_model(
    cfg: &RunConfig,
    data: &Dataset,
    run_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let loss_cfg = cfg.loss_config();
    let mut model = Vae::new(cfg.seed);
    let mut batches = BatchIterator::new(data.len(), cfg.batch_size, stream(cfg.seed, 1).next_u64())?;
    let mut noise_rng = stream(cfg.seed, 2);
    let schedule = cfg.schedule(batches.batches_per_epoch());
    let mut adam = Adam::new(&model.params().iter().collect::<Vec<_>>());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut acc = Accum::default();
        let mut lr = 0.0;
        for (b, indices) in batches.next_epoch().into_iter().enumerate() {
            let x = data.batch(&indices)?;
            let eps = sample_noise(&mut noise_rng, indices.len());
            let tape = Tape::new();
            let bound = model.bind(&tape, true);
            let target = tape.constant(x);
            let (mu, log_var) = bound.encode(&target)?;
            let z = reparameterize_var(&mu, &log_var, &eps)?;
            let logits = bound.decode(&z)?;
            let terms = vae_objective(&target, &logits, &mu, &log_var, &loss_cfg)?;
            let values = terms.values();
            if !values.total.is_finite() {
                let checkpoint = run_dir.map(|d| d.join("last_good.bin")).unwrap_or_default();
                if let Some(dir) = run_dir {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    save_checkpoint(&checkpoint, &model, cfg.fingerprint())?;
                }
                return Err(Error::NonFinite {
                    epoch,
                    step: b,
                    checkpoint,
                });
            }
            let mut grads = tape.backward(&terms.total)?;
            let grads: Vec<Tensor> = bound.vars.iter().map(|v| grads.take(v)).collect();
            lr = schedule.lr_at(step)?;
            let mut params: Vec<&mut Tensor> = model.params_mut().iter_mut().collect();
            adam.step(&mut params, &grads.iter().collect::<Vec<_>>(), lr)?;
            step += 1;

            let w = indices.len() as Float;
            acc.n += indices.len();
            acc.total += w * values.total;
            acc.recons += w * values.recons;
            acc.kl += w * values.kl;
            acc.pixel += w * values.pixel;
            if let Some(f) = values.freq {
                acc.has_freq = true;
                acc.phase += w * f.phase;
                acc.amplitude += w * f.amplitude;
            }
        }
        let n = acc.n as Float;
        let entry = EpochLog {
            epoch,
            total: acc.total / n,
            recons: acc.recons / n,
            kl: acc.kl / n,
            pixel: acc.pixel / n,
            freq_phase: acc.has_freq.then(|| acc.phase / n),
            freq_amplitude: acc.has_freq.then(|| acc.amplitude / n),
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { model, log })
}

pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
