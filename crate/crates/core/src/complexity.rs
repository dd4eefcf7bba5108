//! Unsupervised simple/complex background decision.
//!
//! A briefly trained model reconstructs backgrounds for an evenly spaced
//! subset of frames. If those reconstructions disagree with their own
//! temporal median, measured as the mean soft mask, the scene is complex.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::arch::{Autoencoder, Complexity};
use crate::data_io::{sample_indices, Frame, FrameSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityParams {
    pub tau0: f64,
    /// Probe training iterations.
    pub n_eval: usize,
    /// Probe frame count.
    pub b_eval: usize,
}

impl Default for ComplexityParams {
    fn default() -> Self {
        ComplexityParams {
            tau0: 0.24,
            n_eval: 2000,
            b_eval: 480,
        }
    }
}

impl ComplexityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0 <= 1.0) {
            return Err(Error::Config(format!(
                "tau0 must be in (0, 1], got {}",
                self.tau0
            )));
        }
        if self.n_eval == 0 || self.b_eval == 0 {
            return Err(Error::Config("n_eval and b_eval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityVerdict {
    pub mean_soft_mask: f64,
    pub complexity: Complexity,
}

impl ComplexityVerdict {
    pub fn from_score(mean_soft_mask: f64, tau0: f64) -> Self {
        let complexity = if mean_soft_mask > tau0 {
            Complexity::Complex
        } else {
            Complexity::Simple
        };
        ComplexityVerdict {
            mean_soft_mask,
            complexity,
        }
    }
}

/// Per-pixel, per-channel lower median (order statistic `floor((B-1)/2)`).
pub fn temporal_median(backgrounds: &[Frame]) -> Result<Frame> {
    let first = backgrounds
        .first()
        .ok_or_else(|| Error::Invalid("temporal median of an empty list".into()))?;
    let dim = first.pixels().dim();
    if backgrounds.iter().any(|b| b.pixels().dim() != dim) {
        return Err(Error::Shape("backgrounds differ in size".into()));
    }
    let slices: Vec<&[f32]> = backgrounds
        .iter()
        .map(|b| b.pixels().as_slice().expect("standard layout"))
        .collect();
    let rank = (backgrounds.len() - 1) / 2;
    let mut scratch = vec![0.0f32; backgrounds.len()];
    let mut out = vec![0.0f32; first.pixels().len()];
    for (i, o) in out.iter_mut().enumerate() {
        for (s, src) in scratch.iter_mut().zip(&slices) {
            *s = src[i];
        }
        let (_, median, _) = scratch.select_nth_unstable_by(rank, f32::total_cmp);
        *o = *median;
    }
    Frame::new(Array3::from_shape_vec(dim, out).expect("same element count"))
}

/// Mean over frames and pixels of `tanh(l / tau1)`, where `l` is the L1
/// colour distance between each background and the temporal median.
pub fn median_disagreement(backgrounds: &[Frame], tau1: f64) -> Result<f64> {
    let median = temporal_median(backgrounds)?;
    let med = median.pixels();
    let (_, h, w) = med.dim();
    let mut total = 0.0f64;
    for bg in backgrounds {
        let px = bg.pixels();
        for i in 0..h {
            for j in 0..w {
                let l: f64 = (0..3)
                    .map(|c| (med[[c, i, j]] as f64 - px[[c, i, j]] as f64).abs())
                    .sum();
                total += (l / tau1).tanh();
            }
        }
    }
    Ok(total / (backgrounds.len() * h * w) as f64)
}

/// Reconstructs backgrounds of `positions` in chunks of `batch_size`.
pub fn reconstruct_backgrounds(
    model: &Autoencoder,
    seq: &FrameSequence,
    positions: &[usize],
    batch_size: usize,
) -> Result<Vec<Frame>> {
    let mut out = Vec::with_capacity(positions.len());
    for chunk in positions.chunks(batch_size.max(1)) {
        let frames: Vec<&Frame> = chunk.iter().map(|&i| &seq.frames()[i]).collect();
        out.extend(model.forward(&frames)?.backgrounds);
    }
    Ok(out)
}

pub fn assess_complexity(
    seq: &FrameSequence,
    probe: &Autoencoder,
    params: &ComplexityParams,
    tau1: f64,
    batch_size: usize,
) -> Result<ComplexityVerdict> {
    let positions = sample_indices(seq.len(), params.b_eval);
    let backgrounds = reconstruct_backgrounds(probe, seq, &positions, batch_size)?;
    let score = median_disagreement(&backgrounds, tau1)?;
    Ok(ComplexityVerdict::from_score(score, params.tau0))
}
