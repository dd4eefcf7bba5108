//! Synthetic sequences with exact backgrounds, masks and noise levels.
//!
//! Backgrounds are smooth periodic textures with values in `[0.2, 0.8]`, so
//! additive noise rarely clips. Objects are solid rectangles that bounce off
//! the frame edges and are drawn on top of the noisy background.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::{
    write_frame, write_generic_sequence, write_pfm, Frame, FrameSequence, Label, LabelFrame,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackgroundKind {
    Static,
    /// Brightness scaled by `1 + amplitude * sin(2πt / period)`.
    IlluminationDrift {
        amplitude: f64,
        period: f64,
    },
    /// Horizontal crop of a wider texture, moving `speed` pixels per frame.
    PanningCrop {
        speed: usize,
        base_width: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseField {
    Uniform {
        sigma: f64,
    },
    /// σ grows linearly from `left` at column 0 to `right` at the last column.
    HorizontalRamp {
        left: f64,
        right: f64,
    },
}

impl NoiseField {
    pub fn raster(&self, height: usize, width: usize) -> Array2<f64> {
        match *self {
            NoiseField::Uniform { sigma } => Array2::from_elem((height, width), sigma),
            NoiseField::HorizontalRamp { left, right } => {
                let span = (width.max(2) - 1) as f64;
                Array2::from_shape_fn((height, width), |(_, j)| {
                    left + (right - left) * j as f64 / span
                })
            }
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            NoiseField::Uniform { sigma } => sigma >= 0.0,
            NoiseField::HorizontalRamp { left, right } => left >= 0.0 && right >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectObject {
    pub width: usize,
    pub height: usize,
    pub color: [f32; 3],
    /// Top-left corner `(x, y)` at frame 0.
    pub start: [f64; 2],
    /// Pixels per frame `(dx, dy)`.
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub seed: u64,
    /// Full sine periods of the texture across its width and height.
    #[serde(default = "default_cycles")]
    pub texture_cycles: [u32; 2],
    pub background: BackgroundKind,
    pub noise: NoiseField,
    #[serde(default)]
    pub objects: Vec<RectObject>,
}

fn default_cycles() -> [u32; 2] {
    [1, 1]
}

impl SyntheticSpec {
    /// 64×64, 200 frames, one bouncing 10×10 square, σ = 0.02.
    pub fn static_scene(seed: u64) -> Self {
        SyntheticSpec {
            height: 64,
            width: 64,
            frames: 200,
            seed,
            texture_cycles: [1, 1],
            background: BackgroundKind::Static,
            noise: NoiseField::Uniform { sigma: 0.02 },
            objects: vec![RectObject {
                width: 10,
                height: 10,
                color: [0.95, 0.1, 0.1],
                start: [5.0, 12.0],
                velocity: [1.7, 1.1],
            }],
        }
    }

    /// Static texture without objects; σ ramps from 0 to 0.1 left to right.
    pub fn noise_ramp(seed: u64) -> Self {
        SyntheticSpec {
            objects: Vec::new(),
            noise: NoiseField::HorizontalRamp {
                left: 0.0,
                right: 0.1,
            },
            ..SyntheticSpec::static_scene(seed)
        }
    }

    /// Camera pan at 2 pixels per frame over a textured base four frames wide.
    pub fn panning(seed: u64) -> Self {
        SyntheticSpec {
            texture_cycles: [8, 2],
            background: BackgroundKind::PanningCrop {
                speed: 2,
                base_width: 256,
            },
            ..SyntheticSpec::static_scene(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(Error::Invalid(
                "synthetic size and frame count must be positive".into(),
            ));
        }
        if !self.noise.is_valid() {
            return Err(Error::Invalid("noise sigma must be non-negative".into()));
        }
        for o in &self.objects {
            if o.width == 0 || o.height == 0 || o.width > self.width || o.height > self.height {
                return Err(Error::Invalid(format!(
                    "object {}×{} does not fit a {}×{} frame",
                    o.width, o.height, self.width, self.height
                )));
            }
            if o.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Invalid("object colours must lie in [0, 1]".into()));
            }
        }
        match self.background {
            BackgroundKind::PanningCrop { base_width, .. } if base_width < self.width => {
                Err(Error::Invalid(format!(
                    "pan base width {base_width} is narrower than the frame width {}",
                    self.width
                )))
            }
            BackgroundKind::IlluminationDrift { period, .. } if !(period > 0.0) => {
                Err(Error::Invalid("drift period must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Generated data with its exact ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: FrameSequence,
    pub labels: Vec<LabelFrame>,
    pub backgrounds: Vec<Frame>,
    /// Per-pixel noise standard deviation.
    pub sigma: Array2<f64>,
}

/// Periodic texture in `[0.2, 0.8]` with integer periods over `(width, height)`.
pub fn texture(height: usize, width: usize, cycles: [u32; 2], seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e47_u64);
    let phases: Vec<[f64; 3]> = (0..3)
        .map(|_| {
            [
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
            ]
        })
        .collect();
    let (cx, cy) = (cycles[0] as f64, cycles[1] as f64);
    let px = Array3::from_shape_fn((3, height, width), |(c, i, j)| {
        let x = j as f64 / width as f64;
        let y = i as f64 / height as f64;
        let p = phases[c];
        let v = 0.5 * (TAU * (cx * x + p[0])).sin()
            + 0.3 * (TAU * (cy * y + p[1])).sin()
            + 0.2 * (TAU * (cx * x + cy * y + p[2])).sin();
        (0.5 + 0.3 * v) as f32
    });
    Frame::new(px).expect("texture stays in range")
}

/// Horizontal window of `width` columns starting at `speed * t`, wrapping
/// around the base image.
pub fn panning_crop(base: &Frame, t: usize, speed: usize, width: usize) -> Result<Frame> {
    let base_w = base.width();
    if width > base_w {
        return Err(Error::Invalid(format!(
            "crop width {width} exceeds base width {base_w}"
        )));
    }
    let offset = (speed * t) % base_w;
    let src = base.pixels();
    let px = Array3::from_shape_fn((3, base.height(), width), |(c, i, j)| {
        src[[c, i, (offset + j) % base_w]]
    });
    Frame::new(px)
}

/// Position along one axis for an object bouncing between 0 and `limit`.
fn bounce(start: f64, velocity: f64, t: usize, limit: usize) -> usize {
    if limit == 0 {
        return 0;
    }
    let span = limit as f64;
    let period = 2.0 * span;
    let p = (start + velocity * t as f64).rem_euclid(period);
    let reflected = if p > span { period - p } else { p };
    (reflected.round() as usize).min(limit)
}

fn background_at(spec: &SyntheticSpec, base: &Frame, t: usize) -> Result<Frame> {
    match spec.background {
        BackgroundKind::Static => Ok(base.clone()),
        BackgroundKind::IlluminationDrift { amplitude, period } => {
            let gain = 1.0 + amplitude * (TAU * t as f64 / period).sin();
            Frame::from_clamped(base.pixels().mapv(|v| (v as f64 * gain) as f32))
        }
        BackgroundKind::PanningCrop { speed, .. } => panning_crop(base, t, speed, spec.width),
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let base_w = match spec.background {
        BackgroundKind::PanningCrop { base_width, .. } => base_width,
        _ => w,
    };
    let base = texture(h, base_w, spec.texture_cycles, spec.seed);
    let sigma = spec.noise.raster(h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut frames = Vec::with_capacity(spec.frames);
    let mut labels = Vec::with_capacity(spec.frames);
    let mut backgrounds = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let bg = background_at(spec, &base, t)?;
        let mut px = bg.pixels().clone();
        for ((_, i, j), v) in px.indexed_iter_mut() {
            let s = sigma[[i, j]];
            if s > 0.0 {
                let n: f64 = rng.sample(StandardNormal);
                *v = (*v as f64 + s * n).clamp(0.0, 1.0) as f32;
            }
        }
        let mut label = Array2::from_elem((h, w), Label::Background);
        for o in &spec.objects {
            let x0 = bounce(o.start[0], o.velocity[0], t, w - o.width);
            let y0 = bounce(o.start[1], o.velocity[1], t, h - o.height);
            for i in y0..y0 + o.height {
                for j in x0..x0 + o.width {
                    for c in 0..3 {
                        px[[c, i, j]] = o.color[c];
                    }
                    label[[i, j]] = Label::Foreground;
                }
            }
        }
        frames.push(Frame::new(px)?);
        labels.push(LabelFrame::new(label));
        backgrounds.push(bg);
    }
    Ok(SyntheticSequence {
        frames: FrameSequence::new("synthetic", frames)?,
        labels,
        backgrounds,
        sigma,
    })
}

/// Writes the sequence in the generic layout under `root/name`, plus the true
/// backgrounds (`background/bg%06d.png`), the σ raster (`sigma.pfm`) and the
/// spec itself (`spec.toml`).
pub fn materialize(
    spec: &SyntheticSpec,
    data: &SyntheticSequence,
    root: &Path,
    name: &str,
) -> Result<()> {
    write_generic_sequence(root, name, &data.frames, Some(&data.labels))?;
    let dir = root.join(name);
    for (bg, index) in data.backgrounds.iter().zip(data.frames.indices()) {
        write_frame(
            bg,
            &dir.join("background").join(format!("bg{index:06}.png")),
        )?;
    }
    write_pfm(&data.sigma.mapv(|v| v as f32), &dir.join("sigma.pfm"))?;
    let text = toml::to_string(spec).map_err(|e| Error::Invalid(e.to_string()))?;
    let path = dir.join("spec.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn parse_spec(text: &str) -> Result<SyntheticSpec> {
    let spec: SyntheticSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn noiseless_static_frames_equal_background() {
        let spec = SyntheticSpec {
            objects: Vec::new(),
            noise: NoiseField::Uniform { sigma: 0.0 },
            frames: 5,
            ..SyntheticSpec::static_scene(1)
        };
        let d = generate(&spec).unwrap();
        for (f, bg) in d.frames.frames().iter().zip(&d.backgrounds) {
            assert_eq!(f, bg);
        }
        assert_eq!(d.backgrounds[0], d.backgrounds[4]);
    }

    #[test]
    fn texture_range_and_periodicity() {
        let t = texture(32, 64, [4, 2], 3);
        assert!(t.pixels().iter().all(|&v| (0.2..=0.8).contains(&v)));
        let wide = texture(8, 128, [8, 1], 3);
        let a = panning_crop(&wide, 0, 0, 32).unwrap();
        let b = panning_crop(&wide, 7, 0, 32).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn square_has_one_hundred_foreground_pixels() {
        let d = generate(&SyntheticSpec::static_scene(2)).unwrap();
        assert_eq!(d.labels.len(), 200);
        for l in &d.labels {
            assert_eq!(l.count(Label::Foreground), 100);
        }
        let first = d.labels[0].foreground_mask();
        assert!(d.labels.iter().any(|l| l.foreground_mask() != first));
    }

    #[test]
    fn gaussian_residual_matches_expectation() {
        let spec = SyntheticSpec {
            objects: Vec::new(),
            noise: NoiseField::Uniform { sigma: 0.05 },
            frames: 40,
            ..SyntheticSpec::static_scene(4)
        };
        let d = generate(&spec).unwrap();
        let mut total = 0.0;
        let mut n = 0usize;
        for (f, bg) in d.frames.frames().iter().zip(&d.backgrounds) {
            for (a, b) in f.pixels().iter().zip(bg.pixels()) {
                total += (*a as f64 - *b as f64).abs();
                n += 1;
            }
        }
        let per_pixel = 3.0 * total / n as f64;
        let expected = 3.0 * 0.05 * (2.0 / PI).sqrt();
        assert!((expected - 0.1197).abs() < 1e-4);
        assert!(
            (per_pixel - expected).abs() < 0.002,
            "{per_pixel} vs {expected}"
        );
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate(&SyntheticSpec::static_scene(9)).unwrap();
        let b = generate(&SyntheticSpec::static_scene(9)).unwrap();
        let c = generate(&SyntheticSpec::static_scene(10)).unwrap();
        assert_eq!(a.frames.frames(), b.frames.frames());
        assert_ne!(a.frames.frames(), c.frames.frames());
    }

    #[test]
    fn pan_shifts_by_speed() {
        let d = generate(&SyntheticSpec {
            noise: NoiseField::Uniform { sigma: 0.0 },
            objects: Vec::new(),
            frames: 3,
            ..SyntheticSpec::panning(5)
        })
        .unwrap();
        let f0 = d.frames.frames()[0].pixels();
        let f1 = d.frames.frames()[1].pixels();
        for c in 0..3 {
            for i in 0..64 {
                for j in 0..62 {
                    assert_eq!(f1[[c, i, j]], f0[[c, i, j + 2]]);
                }
            }
        }
        assert_ne!(f0, f1);
    }

    #[test]
    fn pan_wraps_with_period() {
        let base = texture(4, 20, [2, 1], 0);
        let period = 20 / 4;
        for t in 0..6 {
            assert_eq!(
                panning_crop(&base, t, 4, 8).unwrap(),
                panning_crop(&base, t + period, 4, 8).unwrap()
            );
        }
        assert!(panning_crop(&base, 0, 1, 21).is_err());
    }

    #[test]
    fn oversized_object_rejected() {
        let mut spec = SyntheticSpec::static_scene(0);
        spec.objects[0].width = 65;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn bounce_stays_in_range() {
        for t in 0..500 {
            assert!(bounce(3.0, 2.3, t, 54) <= 54);
        }
        assert_eq!(bounce(0.0, 1.0, 60, 54), 48);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = SyntheticSpec::panning(3);
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(parse_spec(&text).unwrap(), spec);
        assert!(parse_spec("height = 0").is_err());
    }
}
