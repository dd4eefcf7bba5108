//! Unsupervised background reconstruction and foreground segmentation.
//!
//! A small convolutional autoencoder is trained on each video sequence on
//! its own. A robust, bootstrap-weighted loss keeps moving objects out of
//! the reconstructed background, and a fourth output channel predicts the
//! expected reconstruction error, which raises the detection threshold in
//! noisy regions.
//!
//! ```no_run
//! use bgrecon_core::{synthetic, trainer, segmenter};
//!
//! let data = synthetic::generate(&synthetic::SyntheticSpec::static_scene(0))?;
//! let mut config = trainer::TrainConfig::default();
//! config.plan.allow_small_frames = true;
//! let trained = trainer::train(&data.frames, &config)?;
//! let masks = segmenter::segment_sequence(
//!     &trained.model,
//!     &data.frames,
//!     &segmenter::SegmentOptions::default(),
//!     config.batch_size,
//! )?;
//! # Ok::<(), bgrecon_core::Error>(())
//! ```

// Validation is written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arch;
pub mod complexity;
pub mod config;
pub mod data_io;
pub mod error;
pub mod evaluator;
pub mod loss;
pub mod nn;
pub mod segmenter;
pub mod synthetic;
pub mod trainer;

pub use arch::{ArchitectureSpec, Autoencoder, Complexity, PlanOptions, Preset};
pub use complexity::{ComplexityParams, ComplexityVerdict};
pub use config::RunConfig;
pub use data_io::{DatasetLayout, Frame, FrameSequence, Label, LabelFrame, LayoutKind, Mask};
pub use error::{Error, Result};
pub use evaluator::{ConfusionCounts, EvalReport};
pub use loss::{LossParams, ReconstructionLoss};
pub use segmenter::{SegmentOptions, SegmentationResult, ThresholdParams};
pub use trainer::{TrainConfig, TrainedModel};
