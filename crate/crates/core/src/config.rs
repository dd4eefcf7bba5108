//! Run configuration: a flat TOML table with kebab-case keys, plus the
//! ablation switches that override single effective parameters.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::arch::{PlanOptions, Preset};
use crate::complexity::ComplexityParams;
use crate::data_io::{DatasetLayout, LayoutKind};
use crate::error::{Error, Result};
use crate::loss::{LossParams, ReconstructionLoss};
use crate::segmenter::{SegmentOptions, ThresholdParams};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub layout: LayoutKind,
    /// Sequence paths relative to the dataset root, e.g. `baseline/highway`.
    pub sequences: Vec<String>,
    pub output_dir: PathBuf,
    pub seed: u64,

    /// Unset values take the preset's training profile.
    pub learning_rate: Option<f32>,
    pub batch_size: Option<usize>,
    pub n_simple: usize,
    pub n_complex: Option<usize>,
    pub e_complex: usize,
    pub lr_drop_fraction: f64,
    pub lr_drop_factor: f32,
    /// `auto` picks the video preset; the image presets imply the non-video
    /// training profile.
    pub preset: String,
    pub allow_small_frames: bool,
    pub log_every: usize,

    pub tau0: f64,
    pub n_eval: usize,
    pub b_eval: usize,
    pub tau1: f64,
    pub beta: f64,
    pub r: usize,
    pub alpha1: f64,
    pub alpha2: f64,

    pub no_bootstrap: bool,
    pub no_noise_threshold: bool,
    pub l2_loss: bool,
    pub no_postprocess: bool,
    pub force_simple: bool,

    pub dump_backgrounds: bool,
    pub dump_noise: bool,
    pub dump_thresholds: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let loss = LossParams::default();
        let complexity = ComplexityParams::default();
        let threshold = ThresholdParams::default();
        RunConfig {
            dataset_root: PathBuf::from("data"),
            layout: LayoutKind::Generic,
            sequences: Vec::new(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            learning_rate: None,
            batch_size: None,
            n_simple: train.n_simple,
            n_complex: None,
            e_complex: train.e_complex,
            lr_drop_fraction: train.lr_drop_fraction,
            lr_drop_factor: train.lr_drop_factor,
            preset: "auto".into(),
            allow_small_frames: false,
            log_every: 100,
            tau0: complexity.tau0,
            n_eval: complexity.n_eval,
            b_eval: complexity.b_eval,
            tau1: loss.tau1,
            beta: loss.beta,
            r: loss.r,
            alpha1: threshold.alpha1,
            alpha2: threshold.alpha2,
            no_bootstrap: false,
            no_noise_threshold: false,
            l2_loss: false,
            no_postprocess: false,
            force_simple: false,
            dump_backgrounds: true,
            dump_noise: false,
            dump_thresholds: false,
        }
    }
}

/// The parameters actually used by a run once ablations are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveParams {
    pub train: TrainConfig,
    pub segment: SegmentOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn preset(&self) -> Result<Option<Preset>> {
        match self.preset.as_str() {
            "auto" => Ok(None),
            other => other.parse().map(Some),
        }
    }

    pub fn layout(&self) -> DatasetLayout {
        DatasetLayout::new(self.layout, &self.dataset_root)
    }

    pub fn effective(&self) -> Result<EffectiveParams> {
        let preset = self.preset()?.unwrap_or(Preset::VideoStride3);
        let base = if preset == Preset::VideoStride3 {
            TrainConfig::default()
        } else {
            TrainConfig::non_video(preset)
        };
        let loss = LossParams {
            tau1: self.tau1,
            beta: if self.no_bootstrap { 0.0 } else { self.beta },
            r: self.r,
            reconstruction: if self.l2_loss {
                ReconstructionLoss::L2
            } else {
                ReconstructionLoss::BootstrapL1
            },
        };
        let complexity = ComplexityParams {
            tau0: if self.force_simple { 1.0 } else { self.tau0 },
            n_eval: self.n_eval,
            b_eval: self.b_eval,
        };
        let train = TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            n_simple: self.n_simple,
            n_complex: self.n_complex.unwrap_or(base.n_complex),
            e_complex: self.e_complex,
            lr_drop_fraction: self.lr_drop_fraction,
            lr_drop_factor: self.lr_drop_factor,
            seed: self.seed,
            preset,
            plan: PlanOptions {
                allow_small_frames: self.allow_small_frames,
            },
            loss,
            complexity,
        };
        let segment = SegmentOptions {
            threshold: ThresholdParams {
                alpha1: self.alpha1,
                alpha2: if self.no_noise_threshold {
                    0.0
                } else {
                    self.alpha2
                },
            },
            post_process: !self.no_postprocess,
        };
        Ok(EffectiveParams { train, segment })
    }

    pub fn validate(&self) -> Result<EffectiveParams> {
        let eff = self.effective()?;
        eff.train.validate()?;
        eff.segment.threshold.validate()?;
        if self.log_every == 0 {
            return Err(Error::Config("log-every must be at least 1".into()));
        }
        Ok(eff)
    }

    /// Category of a sequence: its first path component when it has more
    /// than one, otherwise the sequence name.
    pub fn category_of(sequence: &str) -> &str {
        match sequence.split_once('/') {
            Some((category, _)) => category,
            None => sequence,
        }
    }

    /// The full configuration followed by the effective parameters, one
    /// `key = value` per line.
    pub fn echo(&self) -> Result<String> {
        let eff = self.effective()?;
        let t = &eff.train;
        let s = &eff.segment;
        let lines = [
            ("learning-rate", t.learning_rate.to_string()),
            ("batch-size", t.batch_size.to_string()),
            ("n-simple", t.n_simple.to_string()),
            ("n-complex", t.n_complex.to_string()),
            ("e-complex", t.e_complex.to_string()),
            ("lr-drop-fraction", t.lr_drop_fraction.to_string()),
            ("lr-drop-factor", t.lr_drop_factor.to_string()),
            ("preset", t.preset.name().to_string()),
            ("allow-small-frames", t.plan.allow_small_frames.to_string()),
            ("seed", t.seed.to_string()),
            ("tau0", t.complexity.tau0.to_string()),
            ("n-eval", t.complexity.n_eval.to_string()),
            ("b-eval", t.complexity.b_eval.to_string()),
            ("tau1", t.loss.tau1.to_string()),
            ("beta", t.loss.beta.to_string()),
            ("r", t.loss.r.to_string()),
            (
                "reconstruction-loss",
                match t.loss.reconstruction {
                    ReconstructionLoss::BootstrapL1 => "bootstrap-l1",
                    ReconstructionLoss::L2 => "l2",
                }
                .to_string(),
            ),
            ("alpha1", s.threshold.alpha1.to_string()),
            ("alpha2", s.threshold.alpha2.to_string()),
            ("post-process", s.post_process.to_string()),
        ];
        let mut out = String::from("# configuration\n");
        out.push_str(&self.to_toml());
        out.push_str("\n# effective parameters\n");
        for (k, v) in lines {
            out.push_str(&format!("{k} = {v}\n"));
        }
        Ok(out)
    }
}

/// Lines of the effective block of an [`RunConfig::echo`] output.
pub fn effective_lines(echo: &str) -> Vec<&str> {
    echo.split_once("# effective parameters\n")
        .map(|(_, rest)| rest.lines().collect())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_defaults() {
        let eff = RunConfig::default().validate().unwrap();
        assert_eq!(eff.train, TrainConfig::default());
        assert_eq!(eff.segment, SegmentOptions::default());
    }

    #[test]
    fn file_values_parse_with_kebab_keys() {
        let cfg = RunConfig::from_toml(
            "dataset-root = \"/data/cdnet\"\nlayout = \"cdnet\"\nsequences = [\"baseline/highway\"]\nalpha2 = 5.0\nno-postprocess = true\n",
        )
        .unwrap();
        assert_eq!(cfg.layout, LayoutKind::Cdnet);
        assert_eq!(cfg.alpha2, 5.0);
        assert!(cfg.no_postprocess);
        assert_eq!(cfg.beta, 6.0);
        assert!(RunConfig::from_toml("no-such-key = 1").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig {
            sequences: vec!["a/b".into()],
            force_simple: true,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn each_ablation_changes_one_effective_line() {
        let base = RunConfig::default();
        let base_echo = base.echo().unwrap();
        type Toggle = fn(&mut RunConfig);
        let variants: [(&str, Toggle); 5] = [
            ("beta = 0", |c| c.no_bootstrap = true),
            ("alpha2 = 0", |c| c.no_noise_threshold = true),
            ("reconstruction-loss = l2", |c| c.l2_loss = true),
            ("post-process = false", |c| c.no_postprocess = true),
            ("tau0 = 1", |c| c.force_simple = true),
        ];
        for (expected, apply) in variants {
            let mut cfg = base.clone();
            apply(&mut cfg);
            let echo = cfg.echo().unwrap();
            let changed: Vec<&str> = effective_lines(&echo)
                .into_iter()
                .zip(effective_lines(&base_echo))
                .filter(|(a, b)| a != b)
                .map(|(a, _)| a)
                .collect();
            assert_eq!(changed, vec![expected]);
        }
    }

    #[test]
    fn image_preset_uses_non_video_profile() {
        let cfg = RunConfig {
            preset: "image64".into(),
            ..RunConfig::default()
        };
        let eff = cfg.effective().unwrap();
        assert_eq!(eff.train.batch_size, 128);
        assert_eq!(eff.train.learning_rate, 2e-3);
        assert_eq!(eff.train.n_complex, 500_000);
        assert!(RunConfig {
            preset: "nope".into(),
            ..RunConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn categories() {
        assert_eq!(RunConfig::category_of("baseline/highway"), "baseline");
        assert_eq!(RunConfig::category_of("highway"), "highway");
    }
}
