//! Training, evaluation, preset comparison and the blur demonstration.

mod blur;
mod commands;
mod config;
mod eval;
mod train;

pub use self::blur::{band_energy, blur_demo, default_band_split, BlurDemo, LossReport};
pub use self::commands::{
    cmd_blur_demo, cmd_compare, cmd_eval, cmd_generate, cmd_train, load_split, BlurInput, CompareReport, MetricsRow,
    PresetSummary, TrainReport,
};
pub use self::config::{Preset, RunConfig};
pub use self::eval::{calibrate_lambda_freq, evaluate, Metrics, Reconstructor};
pub use self::train::{train_model, write_train_log, EpochLog, TrainOutcome};
