//! End-to-end runs of the experiment commands on a tiny MNIST stand-in.

use std::fs;
use std::path::{Path, PathBuf};

use stftvae::data::{read_png, Split};
use stftvae::experiments::{
    cmd_blur_demo, cmd_compare, cmd_eval, cmd_generate, cmd_train, evaluate, load_split, train_model, BlurInput,
    Preset, RunConfig,
};
use stftvae::losses::{dssim, LossConfig};
use stftvae::vae::Vae;
use stftvae::Error;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// A data directory whose train and test splits are both the 20-image fixture.
fn mnist_dir(root: &Path) -> PathBuf {
    let dir = root.join("mnist");
    fs::create_dir_all(&dir).unwrap();
    let images = fixture("t10k-first20-images-idx3-ubyte");
    let labels = fixture("t10k-first20-labels-idx1-ubyte");
    for split in [Split::Train, Split::Test] {
        let (i, l) = split.file_names();
        fs::copy(&images, dir.join(i)).unwrap();
        fs::copy(&labels, dir.join(l)).unwrap();
    }
    dir
}

fn config(root: &Path, preset: Preset, epochs: usize) -> RunConfig {
    RunConfig {
        preset,
        epochs,
        batch_size: 5,
        data_dir: mnist_dir(root),
        out_dir: root.join("runs"),
        step_size: 8,
        max_lr: 3e-3,
        samples: 4,
        ..RunConfig::default()
    }
}

#[test]
fn train_writes_artifacts_and_loss_decreases() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), Preset::Stft, 4);
    let mut seen = Vec::new();
    let report = cmd_train(&cfg, &mut |e| seen.push(e.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    for name in ["config.toml", "train_log.csv", "checkpoint.bin", "samples.png"] {
        assert!(report.run_dir.join(name).exists(), "{name}");
    }
    let first = report.log.first().unwrap();
    let last = report.log.last().unwrap();
    assert!(last.total < first.total, "{} -> {}", first.total, last.total);
    assert!(first.freq_phase.is_some() && first.freq_amplitude.is_some());

    let log = fs::read_to_string(report.run_dir.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,total,recons,kl,pixel,freq_phase,freq_amplitude,lr\n"));
    assert_eq!(log.lines().count(), 5);
    let saved = RunConfig::load(&report.run_dir.join("config.toml")).unwrap();
    assert_eq!(saved, cfg);
    let grid = read_png(&report.run_dir.join("samples.png")).unwrap();
    assert_eq!((grid.width, grid.height), (2 * 28 + 2, 2 * 28 + 2));
}

#[test]
fn same_config_and_seed_give_identical_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let a = config(tmp.path(), Preset::DftSsim, 2);
    let b = RunConfig {
        out_dir: tmp.path().join("again"),
        ..a.clone()
    };
    let ra = cmd_train(&a, &mut |_| {}).unwrap();
    let rb = cmd_train(&b, &mut |_| {}).unwrap();
    let bytes = |r: &Path| fs::read(r.join("checkpoint.bin")).unwrap();
    assert_eq!(bytes(&ra.run_dir), bytes(&rb.run_dir));
    assert_eq!(
        fs::read(ra.run_dir.join("train_log.csv")).unwrap(),
        fs::read(rb.run_dir.join("train_log.csv")).unwrap()
    );
    let c = cmd_train(&RunConfig { seed: 1, ..b }, &mut |_| {}).unwrap();
    assert_ne!(bytes(&ra.run_dir), bytes(&c.run_dir));
}

#[test]
fn ssim_objective_alone_reduces_dssim() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig {
        beta: Some(0.0),
        lambda_freq: Some(0.0),
        ..config(tmp.path(), Preset::Ssim, 6)
    };
    let data = load_split(&cfg, Split::Train).unwrap();
    let loss = LossConfig::default();
    let mean_dssim = |model: &Vae| {
        let x = data.batch(&(0..data.len()).collect::<Vec<_>>()).unwrap();
        let y = model.reconstruct(&x).unwrap();
        dssim(&x.reshape(&[20, 28, 28]).unwrap(), &y.reshape(&[20, 28, 28]).unwrap(), &loss).unwrap()
    };
    let before = mean_dssim(&Vae::new(cfg.seed));
    let trained = train_model(&cfg, &data, None, &mut |_| {}).unwrap().model;
    let after = mean_dssim(&trained);
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn eval_reports_and_rejects_foreign_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), Preset::L2, 3);
    let report = cmd_train(&cfg, &mut |_| {}).unwrap();
    let row = cmd_eval(&cfg, None).unwrap();
    assert_eq!((row.loss_name.as_str(), row.epochs, row.seed, row.count), ("L2", 3, 0, 20));
    let csv = fs::read_to_string(report.run_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("loss_name,psnr,ssim,epochs,seed\n"));

    let test = load_split(&cfg, Split::Test).unwrap();
    let untrained = evaluate(&Vae::new(cfg.seed), &test, 7, &cfg.loss_config()).unwrap();
    assert!(untrained.psnr < row.psnr, "{} vs {}", untrained.psnr, row.psnr);

    let other = RunConfig { beta: Some(0.5), ..cfg.clone() };
    let err = cmd_eval(&other, Some(&report.run_dir.join("checkpoint.bin"))).unwrap_err();
    assert!(matches!(err, Error::Fingerprint { .. }), "{err}");
    assert_eq!(err.category(), "checkpoint");
}

#[test]
fn compare_lists_missing_runs_then_trains_and_reuses() {
    let tmp = TempDir::new().unwrap();
    let base = config(tmp.path(), Preset::Stft, 1);
    let presets = [Preset::L2, Preset::Stft];
    match cmd_compare(&base, &presets, &[0], false, &mut |_, _| {}) {
        Err(Error::MissingRuns(missing)) => assert_eq!(missing, vec!["L2 (seed 0)", "STFT (seed 0)"]),
        other => panic!("expected missing runs, got {other:?}"),
    }

    let mut epochs = 0;
    let first = cmd_compare(&base, &presets, &[0, 1], true, &mut |_, _| epochs += 1).unwrap();
    assert_eq!(epochs, 4);
    assert_eq!(first.rows.len(), 4);
    assert_eq!(first.summary.len(), 2);
    assert_eq!(first.mean_for(Preset::L2).unwrap().runs, 2);
    let table = fs::read(base.out_dir.join("compare.csv")).unwrap();
    for p in presets {
        assert!(base.out_dir.join(format!("samples_{}.png", p.slug())).exists());
    }

    let mut retrained = 0;
    let again = cmd_compare(&base, &presets, &[0, 1], false, &mut |_, _| retrained += 1).unwrap();
    assert_eq!(retrained, 0);
    assert_eq!(again.summary, first.summary);
    let psnrs = |r: &stftvae::experiments::CompareReport| r.rows.iter().map(|m| m.psnr).collect::<Vec<_>>();
    assert_eq!(psnrs(&again), psnrs(&first));
    assert_eq!(fs::read(base.out_dir.join("compare.csv")).unwrap(), table);

    let single = cmd_compare(&base, &[Preset::Stft], &[0], false, &mut |_, _| {}).unwrap();
    assert_eq!(single.summary.len(), 1);
    let csv = fs::read_to_string(base.out_dir.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn generate_writes_a_grid() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), Preset::L1, 1);
    let report = cmd_train(&cfg, &mut |_| {}).unwrap();
    let out = tmp.path().join("grid.png");
    let images = cmd_generate(&report.run_dir.join("checkpoint.bin"), Some(cfg.fingerprint()), 9, 3, &out).unwrap();
    assert_eq!(images.len(), 9);
    let grid = read_png(&out).unwrap();
    assert_eq!((grid.width, grid.height), (3 * 28 + 4, 3 * 28 + 4));
    assert!(cmd_generate(&report.run_dir.join("checkpoint.bin"), None, 0, 3, &out).is_err());
}

#[test]
fn blur_demo_from_idx_and_png() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("demo");
    let input = BlurInput::Idx {
        path: fixture("t10k-first20-images-idx3-ubyte"),
        index: 3,
    };
    let demo = cmd_blur_demo(&input, 1.0, None, &LossConfig::default(), &out).unwrap();
    let phase = |v: &str| demo.reports.iter().find(|r| r.variant == v).unwrap().phase;
    assert!(phase("band_reduced") < phase("band_boosted"));
    for name in ["a_original.png", "b_blurred.png", "c_band_reduced.png", "d_band_boosted.png"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let report = fs::read_to_string(out.join("blur_report.csv")).unwrap();
    assert!(report.starts_with("variant,total,phase,amplitude\n"));
    assert_eq!(report.lines().count(), 4);

    let again = cmd_blur_demo(&BlurInput::Png(out.join("a_original.png")), 1.0, Some(7.0), &LossConfig::default(), &out)
        .unwrap();
    assert_eq!(again.original.shape(), &[28, 28]);
    assert!(again.original.max_abs_diff(&demo.original).unwrap() < 1e-12);

    let bad = BlurInput::Idx {
        path: fixture("t10k-first20-images-idx3-ubyte"),
        index: 20,
    };
    assert!(cmd_blur_demo(&bad, 1.0, None, &LossConfig::default(), &out).is_err());
    assert!(cmd_blur_demo(&input, 0.0, None, &LossConfig::default(), &out).is_err());
}

#[test]
fn missing_data_is_a_data_or_io_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig {
        data_dir: tmp.path().join("nowhere"),
        out_dir: tmp.path().join("runs"),
        ..RunConfig::default()
    };
    let err = cmd_train(&cfg, &mut |_| {}).unwrap_err();
    assert_eq!(err.category(), "io");
}
