use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use stftvae::experiments::{
    cmd_blur_demo, cmd_compare, cmd_eval, cmd_generate, cmd_train, BlurInput, EpochLog, Preset, RunConfig,
};
use stftvae::Float;

#[derive(Parser)]
#[command(name = "stftvae", version, about = "Frequency-loss VAE experiments on binarized MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run settings shared by every command that touches a run directory.
#[derive(Args, Clone)]
struct RunArgs {
    /// Flat TOML file with RunConfig fields; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Train on the first N training images.
    #[arg(long)]
    subset: Option<usize>,
    /// Evaluate on the first N test images.
    #[arg(long)]
    test_subset: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// L1, L2, SSIM, DFT+SSIM or STFT.
    #[arg(long)]
    preset: Option<Preset>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.subset {
            cfg.subset = Some(v);
        }
        if let Some(v) = self.test_subset {
            cfg.test_subset = Some(v);
        }
        if let Some(v) = &self.data_dir {
            cfg.data_dir = v.clone();
        }
        if let Some(v) = self.preset {
            cfg.preset = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one preset and write its checkpoint, log and samples.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to the run directory's checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Tabulate PSNR/SSIM for several presets and seeds.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated presets; all five by default.
        #[arg(long, value_delimiter = ',')]
        presets: Vec<Preset>,
        /// Comma-separated seeds; the run seed by default.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Train runs that are missing instead of failing.
        #[arg(long)]
        train: bool,
    },
    /// Decode prior samples from a checkpoint into a PNG grid.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "samples.png")]
        out: PathBuf,
    },
    /// Blur an image and swap its high-band energy with the blurred copy.
    BlurDemo {
        /// PNG image, or an IDX image file together with --index.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        index: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        sigma: Float,
        /// Wrapped radius above which a bin is high frequency; H/4 by default.
        #[arg(long)]
        band_split: Option<Float>,
        #[arg(long, default_value = "blur_demo")]
        out_dir: PathBuf,
    },
}

fn print_epoch(prefix: &str, e: &EpochLog) {
    let freq = match (e.freq_phase, e.freq_amplitude) {
        (Some(p), Some(a)) => format!(" phase {p:.4} amplitude {a:.4}"),
        _ => String::new(),
    };
    eprintln!(
        "{prefix}epoch {:>3}  total {:.5}  pixel {:.5}  kl {:.5}{freq}  lr {:.2e}  {:.1}s",
        e.epoch, e.total, e.pixel, e.kl, e.lr, e.seconds
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let report = cmd_train(&cfg, &mut |e| print_epoch("", e))?;
            println!("{}", report.run_dir.display());
        }
        Command::Eval { run, checkpoint } => {
            let cfg = run.resolve()?;
            let row = cmd_eval(&cfg, checkpoint.as_deref())?;
            println!("loss_name,psnr,ssim,epochs,seed");
            println!("{},{},{},{},{}", row.loss_name, row.psnr, row.ssim, row.epochs, row.seed);
        }
        Command::Compare {
            run,
            presets,
            seeds,
            train,
        } => {
            let cfg = run.resolve()?;
            let presets = if presets.is_empty() { Preset::ALL.to_vec() } else { presets };
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds };
            let report = cmd_compare(&cfg, &presets, &seeds, train, &mut |c, e| {
                print_epoch(&format!("[{} seed {}] ", c.preset, c.seed), e)
            })?;
            println!("loss_name,psnr,ssim,runs");
            for s in &report.summary {
                println!("{},{:.4},{:.4},{}", s.loss_name, s.psnr, s.ssim, s.runs);
            }
        }
        Command::Generate { checkpoint, n, seed, out } => {
            cmd_generate(&checkpoint, None, n, seed, &out)?;
            println!("{}", out.display());
        }
        Command::BlurDemo {
            image,
            index,
            sigma,
            band_split,
            out_dir,
        } => {
            let input = match index {
                Some(index) => BlurInput::Idx { path: image, index },
                None => BlurInput::Png(image),
            };
            let demo = cmd_blur_demo(&input, sigma, band_split, &Default::default(), &out_dir)
                .with_context(|| format!("blur demo into {}", out_dir.display()))?;
            println!("variant,total,phase,amplitude");
            for r in &demo.reports {
                println!("{},{:.6},{:.6},{:.6}", r.variant, r.total, r.phase, r.amplitude);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let lib = err.chain().find_map(|e| e.downcast_ref::<stftvae::Error>());
            let (category, code) = lib.map_or(("internal", 1), |e| (e.category(), e.exit_code()));
            eprintln!("error[{category}]: {err:#}");
            ExitCode::from(code as u8)
        }
    }
}
