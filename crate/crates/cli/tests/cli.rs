use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn stftvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stftvae")).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tiny_mnist(root: &Path) -> PathBuf {
    let dir = root.join("mnist");
    fs::create_dir_all(&dir).unwrap();
    for prefix in ["train", "t10k"] {
        fs::copy(fixture("t10k-first20-images-idx3-ubyte"), dir.join(format!("{prefix}-images-idx3-ubyte"))).unwrap();
        fs::copy(fixture("t10k-first20-labels-idx1-ubyte"), dir.join(format!("{prefix}-labels-idx1-ubyte"))).unwrap();
    }
    dir
}

#[test]
fn train_eval_generate_round_trip() {
    let tmp = TempDir::new().unwrap();
    let data = tiny_mnist(tmp.path());
    let config = tmp.path().join("run.toml");
    fs::write(&config, "batch_size = 10\nepochs = 5\nsamples = 4\n").unwrap();
    let runs = tmp.path().join("runs");
    let common = [
        "--config",
        config.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        runs.to_str().unwrap(),
        "--epochs",
        "2",
        "--preset",
        "dft+ssim",
        "--seed",
        "4",
    ];

    let train = stftvae(&[&["train"], &common[..]].concat());
    assert!(train.status.success(), "{}", stderr(&train));
    let run_dir = runs.join("dft_ssim_seed4");
    let saved = fs::read_to_string(run_dir.join("config.toml")).unwrap();
    assert!(saved.contains("epochs = 2") && saved.contains("batch_size = 10"), "{saved}");
    assert_eq!(stderr(&train).matches("epoch").count(), 2);

    let eval = stftvae(&[&["eval"], &common[..]].concat());
    assert!(eval.status.success(), "{}", stderr(&eval));
    let table = String::from_utf8(eval.stdout).unwrap();
    assert!(table.starts_with("loss_name,psnr,ssim,epochs,seed\nDFT+SSIM,"), "{table}");

    let grid = tmp.path().join("grid.png");
    let checkpoint = run_dir.join("checkpoint.bin");
    let gen = stftvae(&["generate", "--checkpoint", checkpoint.to_str().unwrap(), "--n", "4", "--out", grid.to_str().unwrap()]);
    assert!(gen.status.success(), "{}", stderr(&gen));
    assert!(grid.exists());

    let mut other = common.to_vec();
    other[7] = "3";
    let mismatched = stftvae(&[&["eval"], &other[..]].concat());
    assert_eq!(mismatched.status.code(), Some(5));
    assert!(stderr(&mismatched).starts_with("error[checkpoint]"), "{}", stderr(&mismatched));
}

#[test]
fn compare_without_runs_reports_missing_presets() {
    let tmp = TempDir::new().unwrap();
    let data = tiny_mnist(tmp.path());
    let out = stftvae(&[
        "compare",
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("runs").to_str().unwrap(),
        "--presets",
        "STFT,SSIM",
    ]);
    assert_eq!(out.status.code(), Some(7));
    let err = stderr(&out);
    assert!(err.starts_with("error[missing-runs]") && err.contains("SSIM (seed 0)"), "{err}");
}

#[test]
fn blur_demo_prints_the_report() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("demo");
    let out = stftvae(&[
        "blur-demo",
        "--image",
        fixture("t10k-first20-images-idx3-ubyte").to_str().unwrap(),
        "--index",
        "0",
        "--sigma",
        "1.5",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "variant,total,phase,amplitude");
    assert_eq!(lines.len(), 4);
    assert!(out_dir.join("d_band_boosted.png").exists());

    let bad = stftvae(&["blur-demo", "--image", fixture("t10k-first20-images-idx3-ubyte").to_str().unwrap(), "--index", "0", "--sigma", "0"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).starts_with("error[config]"));
}

#[test]
fn bad_inputs_map_to_error_categories() {
    let tmp = TempDir::new().unwrap();
    let missing = stftvae(&["train", "--data-dir", tmp.path().join("none").to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(4));
    assert!(stderr(&missing).starts_with("error[io]"));

    let config = tmp.path().join("bad.toml");
    fs::write(&config, "learning_rate = 3\n").unwrap();
    let unknown = stftvae(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(stderr(&unknown).contains("learning_rate"));

    let preset = stftvae(&["train", "--preset", "mse"]);
    assert!(!preset.status.success());
    assert!(stderr(&preset).contains("unknown preset"));

    let corrupt = tmp.path().join("corrupt.bin");
    fs::write(&corrupt, b"not a checkpoint").unwrap();
    let gen = stftvae(&["generate", "--checkpoint", corrupt.to_str().unwrap(), "--out", tmp.path().join("x.png").to_str().unwrap()]);
    assert_eq!(gen.status.code(), Some(5));
}
