//! Bootstrap-weighted reconstruction loss and the background-noise loss.
//!
//! Shapes follow `[N, 3, h, w]` for colour batches and `[N, h, w]` for
//! per-pixel maps. Everything is computed in `f64`.
//!
//! The bootstrap weights and the noise-loss target are constants for the
//! optimizer: [`LossBundle::gradients`] never differentiates through them.

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionLoss {
    /// Bootstrap-weighted per-pixel L1.
    BootstrapL1,
    /// Unweighted squared error, kept for ablation runs.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Soft threshold of the foreground mask.
    pub tau1: f64,
    /// Decay rate of the bootstrap weights.
    pub beta: f64,
    /// Smoothing divisor; the box radius is `floor(width / r)`.
    pub r: usize,
    pub reconstruction: ReconstructionLoss,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            tau1: 0.25,
            beta: 6.0,
            r: 75,
            reconstruction: ReconstructionLoss::BootstrapL1,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > 0.0) {
            return Err(Error::Config(format!(
                "tau1 must be positive, got {}",
                self.tau1
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        if self.r < 1 {
            return Err(Error::Config("r must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-pixel sum over colour channels of `|x̂ - x|`.
pub fn pixel_l1(background: &Array4<f64>, frames: &Array4<f64>) -> Result<Array3<f64>> {
    let (n, c, h, w) = background.dim();
    if background.dim() != frames.dim() || c != 3 {
        return Err(Error::Shape(format!(
            "pixel_l1 needs matching [N, 3, h, w] inputs, got {:?} and {:?}",
            background.dim(),
            frames.dim()
        )));
    }
    let mut l = Array3::zeros((n, h, w));
    for ch in 0..3 {
        Zip::from(&mut l)
            .and(background.index_axis(Axis(1), ch))
            .and(frames.index_axis(Axis(1), ch))
            .for_each(|acc, &a, &b| *acc += (a - b).abs());
    }
    Ok(l)
}

pub fn soft_mask(l: &Array3<f64>, tau1: f64) -> Array3<f64> {
    l.mapv(|v| (v / tau1).tanh())
}

/// Box radius for a frame of the given width.
pub fn smoothing_radius(width: usize, r: usize) -> usize {
    width / r
}

/// Mean over the `(2k+1)²` window with replicated borders.
pub fn box_average(m: ArrayView2<f64>, k: usize) -> Array2<f64> {
    let (h, w) = m.dim();
    if k == 0 {
        return m.to_owned();
    }
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let span = 2 * k + 1;
    let mut padded = vec![0.0f64; w + 2 * k];
    let mut rows = Array2::<f64>::zeros((h, w));
    for (src, mut dst) in m.rows().into_iter().zip(rows.rows_mut()) {
        for (t, p) in padded.iter_mut().enumerate() {
            *p = src[clamp(t as isize - k as isize, w)];
        }
        for (d, window) in dst.iter_mut().zip(padded.windows(span)) {
            *d = window.iter().sum();
        }
    }
    let area = (span * span) as f64;
    let mut out = Array2::<f64>::zeros((h, w));
    for (i, mut dst) in out.rows_mut().into_iter().enumerate() {
        for l in 0..span {
            dst += &rows.row(clamp(i as isize + l as isize - k as isize, h));
        }
        dst /= area;
    }
    out
}

pub fn smooth_mask(m: &Array3<f64>, r: usize) -> Array3<f64> {
    let k = smoothing_radius(m.dim().2, r);
    let mut out = Array3::zeros(m.dim());
    for (src, mut dst) in m.outer_iter().zip(out.outer_iter_mut()) {
        dst.assign(&box_average(src, k));
    }
    out
}

pub fn bootstrap_weights(smoothed: &Array3<f64>, beta: f64) -> Array3<f64> {
    smoothed.mapv(|v| (-beta * v).exp())
}

/// `(1 / Nhw) Σ w·l`.
pub fn reconstruction_loss(l: &Array3<f64>, weights: &Array3<f64>) -> f64 {
    let total: f64 = Zip::from(l)
        .and(weights)
        .fold(0.0, |acc, &l, &w| acc + w * l);
    total / l.len() as f64
}

/// `(1 / 3Nhw) Σ w·|l̂ - l|`.
pub fn noise_loss(noise: &Array3<f64>, l: &Array3<f64>, weights: &Array3<f64>) -> f64 {
    let total: f64 = Zip::from(noise)
        .and(l)
        .and(weights)
        .fold(0.0, |acc, &n, &l, &w| acc + w * (n - l).abs());
    total / (3 * l.len()) as f64
}

#[derive(Debug, Clone)]
pub struct LossBundle {
    pub l: Array3<f64>,
    pub mask: Array3<f64>,
    pub smoothed: Array3<f64>,
    pub weights: Array3<f64>,
    pub reconstruction: f64,
    pub noise: f64,
    pub total: f64,
    kind: ReconstructionLoss,
}

#[derive(Debug, Clone)]
pub struct LossGradients {
    /// `[N, 3, h, w]`
    pub background: Array4<f64>,
    /// `[N, h, w]`
    pub noise: Array3<f64>,
}

pub fn total_loss(
    background: &Array4<f64>,
    noise: &Array3<f64>,
    frames: &Array4<f64>,
    params: &LossParams,
) -> Result<LossBundle> {
    let l = pixel_l1(background, frames)?;
    if noise.dim() != l.dim() {
        return Err(Error::Shape(format!(
            "noise map {:?} does not match frames {:?}",
            noise.dim(),
            l.dim()
        )));
    }
    let mask = soft_mask(&l, params.tau1);
    let smoothed = smooth_mask(&mask, params.r);
    let (weights, reconstruction) = match params.reconstruction {
        ReconstructionLoss::BootstrapL1 => {
            let w = bootstrap_weights(&smoothed, params.beta);
            let rec = reconstruction_loss(&l, &w);
            (w, rec)
        }
        ReconstructionLoss::L2 => {
            let sq: f64 = Zip::from(background)
                .and(frames)
                .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
            (Array3::ones(l.dim()), sq / l.len() as f64)
        }
    };
    let noise_term = noise_loss(noise, &l, &weights);
    Ok(LossBundle {
        reconstruction,
        noise: noise_term,
        total: reconstruction + noise_term,
        l,
        mask,
        smoothed,
        weights,
        kind: params.reconstruction,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl LossBundle {
    /// Gradients of the total loss with the weights and the noise target
    /// held constant.
    pub fn gradients(
        &self,
        background: &Array4<f64>,
        noise: &Array3<f64>,
        frames: &Array4<f64>,
    ) -> LossGradients {
        let (n, _, h, w) = background.dim();
        let pixels = (n * h * w) as f64;
        let mut d_background = Array4::zeros(background.dim());
        for (((mut dn, an), fn_), wn) in d_background
            .outer_iter_mut()
            .zip(background.outer_iter())
            .zip(frames.outer_iter())
            .zip(self.weights.outer_iter())
        {
            for ((dc, ac), fc) in dn
                .outer_iter_mut()
                .zip(an.outer_iter())
                .zip(fn_.outer_iter())
            {
                let z = Zip::from(dc).and(ac).and(fc).and(wn);
                match self.kind {
                    ReconstructionLoss::BootstrapL1 => {
                        z.for_each(|d, &a, &b, &w| *d = w * sign(a - b) / pixels)
                    }
                    ReconstructionLoss::L2 => {
                        z.for_each(|d, &a, &b, _| *d = 2.0 * (a - b) / pixels)
                    }
                }
            }
        }
        let mut d_noise = Array3::zeros(noise.dim());
        Zip::from(&mut d_noise)
            .and(noise)
            .and(&self.l)
            .and(&self.weights)
            .for_each(|d, &nh, &l, &w| *d = w * sign(nh - l) / (3.0 * pixels));
        LossGradients {
            background: d_background,
            noise: d_noise,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn pixel(rgb: [f64; 3]) -> Array4<f64> {
        Array4::from_shape_fn((1, 3, 1, 1), |(_, c, _, _)| rgb[c])
    }

    #[test]
    fn pixel_l1_examples() {
        let x = pixel([0.3, 0.6, 0.9]);
        assert_eq!(pixel_l1(&x, &x).unwrap()[[0, 0, 0]], 0.0);
        let l = pixel_l1(&pixel([0.0; 3]), &pixel([1.0; 3])).unwrap();
        assert_eq!(l[[0, 0, 0]], 3.0);
        let l = pixel_l1(&pixel([0.2, 0.5, 0.9]), &pixel([0.1, 0.7, 0.4])).unwrap();
        assert!(close(l[[0, 0, 0]], 0.8, 1e-12));
    }

    #[test]
    fn pixel_l1_rejects_shape_mismatch() {
        let a = Array4::zeros((1, 3, 2, 2));
        let b = Array4::zeros((1, 3, 2, 3));
        assert!(pixel_l1(&a, &b).is_err());
        let c = Array4::zeros((1, 1, 2, 2));
        assert!(pixel_l1(&c, &c).is_err());
    }

    #[test]
    fn soft_mask_examples() {
        let l = Array3::from_shape_vec((1, 1, 3), vec![0.0, 0.25, 3.0]).unwrap();
        let m = soft_mask(&l, 0.25);
        assert_eq!(m[[0, 0, 0]], 0.0);
        assert!(close(m[[0, 0, 1]], 0.761_594_155_955_764_9, 1e-12));
        assert!(close(m[[0, 0, 2]], 1.0, 1e-9));
    }

    #[test]
    fn smoothing_radius_uses_width() {
        assert_eq!(smoothing_radius(320, 75), 4);
        assert_eq!(smoothing_radius(64, 75), 0);
    }

    #[test]
    fn smoothing_preserves_constants() {
        let m = Array3::from_elem((2, 7, 9), 0.3);
        let s = smooth_mask(&m, 2);
        assert!(s.iter().all(|&v| close(v, 0.3, 1e-15)));
    }

    #[test]
    fn smoothing_spreads_single_pixel() {
        let mut m = Array2::<f64>::zeros((5, 5));
        m[[2, 2]] = 1.0;
        let s = box_average(m.view(), 1);
        for ((i, j), &v) in s.indexed_iter() {
            let inside = (1..=3).contains(&i) && (1..=3).contains(&j);
            let expected = if inside { 1.0 / 9.0 } else { 0.0 };
            assert!(close(v, expected, 1e-15), "({i},{j}) = {v}");
        }
    }

    #[test]
    fn bootstrap_weight_examples() {
        let m = Array3::from_shape_vec((1, 1, 2), vec![0.0, 1.0]).unwrap();
        let w = bootstrap_weights(&m, 6.0);
        assert_eq!(w[[0, 0, 0]], 1.0);
        assert!(close(w[[0, 0, 1]], 0.002_478_752_176_666_358_4, 1e-15));
        assert!(bootstrap_weights(&m, 0.0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn loss_examples() {
        let zeros = Array3::zeros((1, 2, 2));
        let ones = Array3::ones((1, 2, 2));
        assert_eq!(reconstruction_loss(&zeros, &ones), 0.0);
        let l = Array3::from_elem((1, 2, 2), 0.8);
        assert!(close(reconstruction_loss(&l, &ones), 0.8, 1e-15));

        let l = Array3::from_shape_vec((1, 1, 2), vec![0.4, 1.0]).unwrap();
        let w = Array3::from_shape_vec((1, 1, 2), vec![1.0, (-6.0f64).exp()]).unwrap();
        let rec = reconstruction_loss(&l, &w);
        assert!(close(rec, (0.4 + (-6.0f64).exp()) / 2.0, 1e-15));
        assert!(close(rec, 0.201_239_38, 1e-8));

        let l = Array3::from_elem((1, 2, 2), 0.3);
        assert_eq!(noise_loss(&l, &l, &ones), 0.0);
        assert!(close(noise_loss(&zeros, &l, &ones), 0.1, 1e-15));
        assert_eq!(noise_loss(&zeros, &l, &zeros), 0.0);
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss() {
        let x = Array4::from_shape_fn((2, 3, 4, 4), |(n, c, i, j)| {
            ((n + c + i * j) % 5) as f64 / 5.0
        });
        let noise = Array3::zeros((2, 4, 4));
        let b = total_loss(&x, &noise, &x, &LossParams::default()).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn zero_beta_is_plain_mean_l1() {
        let x = Array4::from_shape_fn((1, 3, 3, 3), |(_, c, i, j)| (c + i + j) as f64 / 9.0);
        let y = Array4::from_shape_fn((1, 3, 3, 3), |(_, c, i, j)| (c * i + j) as f64 / 11.0);
        let params = LossParams {
            beta: 0.0,
            r: 1,
            ..LossParams::default()
        };
        let b = total_loss(&x, &Array3::zeros((1, 3, 3)), &y, &params).unwrap();
        let mean_l1 = pixel_l1(&x, &y).unwrap().mean().unwrap();
        assert!(close(b.reconstruction, mean_l1, 1e-15));
    }

    #[test]
    fn noise_map_does_not_touch_reconstruction_term() {
        let x = Array4::from_shape_fn((1, 3, 4, 4), |(_, c, i, j)| (c + i + j) as f64 / 12.0);
        let y = Array4::from_elem((1, 3, 4, 4), 0.5);
        let params = LossParams {
            r: 2,
            ..LossParams::default()
        };
        let a = total_loss(&x, &Array3::zeros((1, 4, 4)), &y, &params).unwrap();
        let b = total_loss(&x, &Array3::from_elem((1, 4, 4), 0.7), &y, &params).unwrap();
        assert_eq!(a.reconstruction, b.reconstruction);
        assert_ne!(a.noise, b.noise);
    }

    proptest::proptest! {
        #[test]
        fn larger_error_never_lowers_masks(
            base in proptest::collection::vec(0.0f64..1.0, 3 * 16),
            target in proptest::collection::vec(0.0f64..1.0, 3 * 16),
            pick in 0usize..48,
            bump in 0.0f64..0.5,
        ) {
            let x = Array4::from_shape_vec((1, 3, 4, 4), target).unwrap();
            let a = Array4::from_shape_vec((1, 3, 4, 4), base).unwrap();
            let mut b = a.clone();
            let idx = (0, pick / 16, (pick % 16) / 4, pick % 4);
            let dir = if a[idx] >= x[idx] { 1.0 } else { -1.0 };
            b[idx] += dir * bump;
            let params = LossParams { r: 2, ..LossParams::default() };
            let pa = total_loss(&a, &Array3::zeros((1, 4, 4)), &x, &params).unwrap();
            let pb = total_loss(&b, &Array3::zeros((1, 4, 4)), &x, &params).unwrap();
            for (u, v) in pa.l.iter().zip(&pb.l) { proptest::prop_assert!(v >= u); }
            for (u, v) in pa.mask.iter().zip(&pb.mask) { proptest::prop_assert!(v >= u); }
            for (u, v) in pa.smoothed.iter().zip(&pb.smoothed) { proptest::prop_assert!(*v >= *u - 1e-15); }
        }
    }
}
