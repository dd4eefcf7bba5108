use std::path::PathBuf;

use bgrecon_core::data_io::LayoutKind;
use bgrecon_core::{Error, Result, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "bgrecon",
    version,
    about = "Per-sequence autoencoder background subtraction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train, segment and (when ground truth exists) evaluate each sequence.
    Run(RunArgs),
    /// Train and save a checkpoint per sequence.
    Train(RunArgs),
    /// Segment sequences with previously saved checkpoints.
    Segment(SegmentArgs),
    /// Score mask images against ground truth.
    Eval(EvalArgs),
    /// Write a synthetic dataset in the generic layout.
    Synth(SynthArgs),
    /// Run only the short probe training and report the complexity verdict.
    Complexity(RunArgs),
}

/// Flags mirroring the configuration file keys. Flags win over the file,
/// the file wins over built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat TOML configuration file with kebab-case keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset_root: Option<PathBuf>,
    /// cdnet, lasiesta, bmc or generic.
    #[arg(long)]
    pub layout: Option<LayoutKind>,
    /// Sequence to process, relative to the dataset root; repeatable.
    #[arg(long = "sequence")]
    pub sequences: Vec<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub learning_rate: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub n_simple: Option<usize>,
    #[arg(long)]
    pub n_complex: Option<usize>,
    #[arg(long)]
    pub e_complex: Option<usize>,
    #[arg(long)]
    pub lr_drop_fraction: Option<f64>,
    #[arg(long)]
    pub lr_drop_factor: Option<f32>,
    /// auto, video, image64 or image128.
    #[arg(long)]
    pub preset: Option<String>,
    /// Accept frames smaller than 200 pixels with the video preset.
    #[arg(long)]
    pub allow_small_frames: bool,
    #[arg(long)]
    pub log_every: Option<usize>,

    #[arg(long)]
    pub tau0: Option<f64>,
    #[arg(long)]
    pub n_eval: Option<usize>,
    #[arg(long)]
    pub b_eval: Option<usize>,
    #[arg(long)]
    pub tau1: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,

    /// Uniform loss weights (beta = 0).
    #[arg(long)]
    pub no_bootstrap: bool,
    /// Thresholds ignore the noise estimate (alpha2 = 0).
    #[arg(long)]
    pub no_noise_threshold: bool,
    /// Train with a plain squared-error reconstruction loss.
    #[arg(long)]
    pub l2_loss: bool,
    /// Skip the closing/opening of the raw masks.
    #[arg(long)]
    pub no_postprocess: bool,
    /// Always keep the simple architecture (tau0 = 1).
    #[arg(long)]
    pub force_simple: bool,

    #[arg(long)]
    pub dump_backgrounds: Option<bool>,
    #[arg(long)]
    pub dump_noise: Option<bool>,
    #[arg(long)]
    pub dump_thresholds: Option<bool>,

    /// Worker processes for independent sequences.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Internal: skip the aggregate report (used by worker processes).
    #[arg(long, hide = true)]
    pub no_report: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint to use; only valid with a single sequence. Defaults to
    /// `<output-dir>/<sequence>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Mask directory; only valid with a single sequence. Defaults to
    /// `<output-dir>/<sequence>/masks`.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML scene description.
    #[arg(long, conflicts_with = "scene")]
    pub spec: Option<PathBuf>,
    /// Built-in scene: static, ramp or pan.
    #[arg(long)]
    pub scene: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Sequence directory name under `--out`.
    #[arg(long, default_value = "synthetic")]
    pub name: String,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        set(&mut c.dataset_root, self.dataset_root.clone());
        set(&mut c.layout, self.layout);
        if !self.sequences.is_empty() {
            c.sequences = self.sequences.clone();
        }
        set(&mut c.output_dir, self.output_dir.clone());
        set(&mut c.seed, self.seed);
        if self.learning_rate.is_some() {
            c.learning_rate = self.learning_rate;
        }
        if self.batch_size.is_some() {
            c.batch_size = self.batch_size;
        }
        set(&mut c.n_simple, self.n_simple);
        if self.n_complex.is_some() {
            c.n_complex = self.n_complex;
        }
        set(&mut c.e_complex, self.e_complex);
        set(&mut c.lr_drop_fraction, self.lr_drop_fraction);
        set(&mut c.lr_drop_factor, self.lr_drop_factor);
        set(&mut c.preset, self.preset.clone());
        c.allow_small_frames |= self.allow_small_frames;
        set(&mut c.log_every, self.log_every);
        set(&mut c.tau0, self.tau0);
        set(&mut c.n_eval, self.n_eval);
        set(&mut c.b_eval, self.b_eval);
        set(&mut c.tau1, self.tau1);
        set(&mut c.beta, self.beta);
        set(&mut c.r, self.r);
        set(&mut c.alpha1, self.alpha1);
        set(&mut c.alpha2, self.alpha2);
        c.no_bootstrap |= self.no_bootstrap;
        c.no_noise_threshold |= self.no_noise_threshold;
        c.l2_loss |= self.l2_loss;
        c.no_postprocess |= self.no_postprocess;
        c.force_simple |= self.force_simple;
        set(&mut c.dump_backgrounds, self.dump_backgrounds);
        set(&mut c.dump_noise, self.dump_noise);
        set(&mut c.dump_thresholds, self.dump_thresholds);
        c.validate()?;
        Ok(c)
    }
}
