//! Foreground masks from a trained model: per-pixel thresholds scaled by the
//! frame illumination and raised by the predicted noise, then morphology.

mod morphology;

pub use morphology::{close, dilate, erode, morph_close_open, open, CLOSING_SIZE, OPENING_SIZE};

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::arch::Autoencoder;
use crate::data_io::{Frame, FrameSequence, Mask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    /// Illumination gain.
    pub alpha1: f64,
    /// Noise gain.
    pub alpha2: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        ThresholdParams {
            alpha1: 96.0 / 255.0,
            alpha2: 7.0,
        }
    }
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(Error::Config(format!(
                "alpha1 and alpha2 must be non-negative, got {} and {}",
                self.alpha1, self.alpha2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    pub threshold: ThresholdParams,
    pub post_process: bool,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            threshold: ThresholdParams::default(),
            post_process: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SegmentationResult {
    pub background: Frame,
    pub noise: Array2<f32>,
    pub threshold: Array2<f32>,
    pub raw_mask: Mask,
    pub mask: Mask,
}

/// Mean absolute value over all channels and pixels.
pub fn illumination(background: &Frame) -> f64 {
    let px = background.pixels();
    px.iter().map(|&v| (v as f64).abs()).sum::<f64>() / px.len() as f64
}

/// `alpha1 * illumination + alpha2 * noise` per pixel.
pub fn threshold_map(
    illumination: f64,
    noise: &Array2<f64>,
    params: &ThresholdParams,
) -> Array2<f64> {
    let base = params.alpha1 * illumination;
    noise.mapv(|n| base + params.alpha2 * n)
}

/// Foreground where the error strictly exceeds the threshold.
pub fn raw_mask(l: &Array2<f64>, tau: &Array2<f64>) -> Result<Mask> {
    if l.dim() != tau.dim() {
        return Err(Error::Shape(format!(
            "error map {:?} vs threshold map {:?}",
            l.dim(),
            tau.dim()
        )));
    }
    Ok(Zip::from(l).and(tau).map_collect(|&l, &t| l > t))
}

/// Per-pixel L1 colour distance between a frame and its background.
pub fn frame_error(frame: &Frame, background: &Frame) -> Result<Array2<f64>> {
    if frame.dim() != background.dim() {
        return Err(Error::Shape(format!(
            "frame {:?} vs background {:?}",
            frame.dim(),
            background.dim()
        )));
    }
    let (a, b) = (frame.pixels(), background.pixels());
    Ok(Array2::from_shape_fn(frame.dim(), |(i, j)| {
        (0..3)
            .map(|c| (a[[c, i, j]] as f64 - b[[c, i, j]] as f64).abs())
            .sum()
    }))
}

/// Segments one frame given the model's background and noise map for it.
pub fn segment_frame(
    frame: &Frame,
    background: Frame,
    noise: Array2<f32>,
    options: &SegmentOptions,
) -> Result<SegmentationResult> {
    let l = frame_error(frame, &background)?;
    let tau = threshold_map(
        illumination(&background),
        &noise.mapv(f64::from),
        &options.threshold,
    );
    let raw = raw_mask(&l, &tau)?;
    let mask = if options.post_process {
        morph_close_open(&raw)
    } else {
        raw.clone()
    };
    Ok(SegmentationResult {
        background,
        noise,
        threshold: tau.mapv(|v| v as f32),
        raw_mask: raw,
        mask,
    })
}

/// One forward pass over `frames`, then per-frame segmentation.
pub fn segment_batch(
    model: &Autoencoder,
    frames: &[&Frame],
    options: &SegmentOptions,
) -> Result<Vec<SegmentationResult>> {
    let rec = model.forward(frames)?;
    frames
        .iter()
        .zip(rec.backgrounds.into_iter().zip(rec.noise))
        .map(|(f, (bg, noise))| segment_frame(f, bg, noise, options))
        .collect()
}

/// Segments a sequence in batches, handing each result to `sink` with its
/// position in the sequence.
pub fn segment_sequence_with(
    model: &Autoencoder,
    seq: &FrameSequence,
    options: &SegmentOptions,
    batch_size: usize,
    sink: &mut dyn FnMut(usize, SegmentationResult) -> Result<()>,
) -> Result<()> {
    options.threshold.validate()?;
    let frames: Vec<&Frame> = seq.frames().iter().collect();
    let mut position = 0;
    for chunk in frames.chunks(batch_size.max(1)) {
        for result in segment_batch(model, chunk, options)? {
            sink(position, result)?;
            position += 1;
        }
    }
    Ok(())
}

pub fn segment_sequence(
    model: &Autoencoder,
    seq: &FrameSequence,
    options: &SegmentOptions,
    batch_size: usize,
) -> Result<Vec<SegmentationResult>> {
    let mut out = Vec::with_capacity(seq.len());
    segment_sequence_with(model, seq, options, batch_size, &mut |_, r| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}
