//! Autoencoder layer plans and the model that realizes them.
//!
//! The encoder is a stack of `conv -> group norm -> CELU` blocks, the decoder
//! mirrors it with transposed convolutions and ends in a 4-channel sigmoid:
//! three background colour channels and one noise-estimate channel. Two
//! positional channels (horizontal and vertical coordinates in `[-1, 1]`) are
//! appended to the input of every layer.

use ndarray::{concatenate, s, Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::Frame;
use crate::error::{Error, Result};
use crate::nn::{
    celu, celu_backward, conv_output_size, sigmoid, sigmoid_backward, Conv2d, ConvTranspose2d,
    GroupNorm, GroupNormCache, Taps,
};

pub const LATENT_CHANNELS: usize = 16;
pub const OUTPUT_CHANNELS: usize = 4;
pub const POSITIONAL_CHANNELS: usize = 2;
pub const NORM_GROUPS: usize = 8;
/// Smallest number of values a normalization group may span per sample.
/// Two-value groups normalize to exactly ±1, which starves a 1×1 latent.
pub const MIN_GROUP_VALUES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Kernel 5, stride 3, for video frames with `max(h, w)` in 200..=1000.
    VideoStride3,
    Image64Stride2,
    Image128Stride2,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::VideoStride3 => "video_stride3",
            Preset::Image64Stride2 => "image64_stride2",
            Preset::Image128Stride2 => "image128_stride2",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "video_stride3" | "video" => Ok(Preset::VideoStride3),
            "image64_stride2" | "image64" => Ok(Preset::Image64Stride2),
            "image128_stride2" | "image128" => Ok(Preset::Image128Stride2),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Simple,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Feature channels, not counting the positional channels.
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub input_size: (usize, usize),
    pub output_size: (usize, usize),
}

impl LayerSpec {
    pub fn taps(&self) -> Taps {
        Taps {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub preset: Preset,
    pub complexity: Complexity,
    pub height: usize,
    pub width: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub latent_channels: usize,
    pub norm_groups: usize,
}

impl ArchitectureSpec {
    /// Channel list including the input, as `(3, c1, ..., 16)`.
    pub fn encoder_channels(&self) -> Vec<usize> {
        channel_list(&self.encoder)
    }

    /// Channel list including the latent, as `(16, ..., 4)`.
    pub fn decoder_channels(&self) -> Vec<usize> {
        channel_list(&self.decoder)
    }

    /// Group count for a normalization over `channels` maps of size
    /// `spatial`: the configured count when it divides the channels,
    /// otherwise one group. Counts are then lowered until every group spans
    /// at least [`MIN_GROUP_VALUES`] values per sample.
    pub fn groups_for(&self, channels: usize, spatial: (usize, usize)) -> usize {
        let mut g = self.norm_groups.min(channels).max(1);
        if channels % g != 0 {
            return 1;
        }
        let area = spatial.0 * spatial.1;
        while g > 1 && (channels % g != 0 || channels / g * area < MIN_GROUP_VALUES) {
            g -= 1;
        }
        g
    }

    pub fn parameter_count(&self) -> usize {
        let k2 = |l: &LayerSpec| l.kernel * l.kernel;
        let mut n = 0;
        for l in &self.encoder {
            n += (l.in_channels + POSITIONAL_CHANNELS) * l.out_channels * k2(l) + l.out_channels;
            n += 2 * l.out_channels;
        }
        for (i, l) in self.decoder.iter().enumerate() {
            n += (l.in_channels + POSITIONAL_CHANNELS) * l.out_channels * k2(l) + l.out_channels;
            if i + 1 < self.decoder.len() {
                n += 2 * l.out_channels;
            }
        }
        n
    }

    fn validate(&self) -> Result<()> {
        let enc = &self.encoder;
        let dec = &self.decoder;
        let fail = |msg: String| Err(Error::Shape(msg));
        if enc.is_empty() || enc.len() != dec.len() {
            return fail("encoder and decoder must have the same non-zero depth".into());
        }
        if enc[0].input_size != (self.height, self.width) || enc[0].in_channels != 3 {
            return fail("encoder must start from the 3-channel frame".into());
        }
        for pair in enc.windows(2).chain(dec.windows(2)) {
            if pair[0].output_size != pair[1].input_size
                || pair[0].out_channels != pair[1].in_channels
            {
                return fail(format!(
                    "layers do not chain: {:?} -> {:?}",
                    pair[0], pair[1]
                ));
            }
        }
        for l in enc {
            let h = conv_output_size(l.input_size.0, l.taps());
            let w = conv_output_size(l.input_size.1, l.taps());
            if (h, w) != l.output_size {
                return fail(format!(
                    "encoder layer output {:?} != {:?}",
                    l.output_size,
                    (h, w)
                ));
            }
        }
        for (d, e) in dec.iter().zip(enc.iter().rev()) {
            if d.input_size != e.output_size || d.output_size != e.input_size {
                return fail(format!("decoder layer {d:?} does not mirror {e:?}"));
            }
        }
        let last = dec.last().expect("non-empty");
        if last.out_channels != OUTPUT_CHANNELS || last.output_size != (self.height, self.width) {
            return fail("decoder must end with 4 channels at the frame size".into());
        }
        if enc.last().expect("non-empty").out_channels != self.latent_channels {
            return fail("encoder must end with the latent channel count".into());
        }
        Ok(())
    }
}

fn channel_list(layers: &[LayerSpec]) -> Vec<usize> {
    std::iter::once(layers[0].in_channels)
        .chain(layers.iter().map(|l| l.out_channels))
        .collect()
}

/// Relaxations of the size rules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// Let the video preset accept `max(h, w) < 200`, using the 5-layer
    /// channel rows.
    pub allow_small_frames: bool,
}

const VIDEO_TAPS: (usize, usize, usize) = (5, 3, 2);

fn video_channels(complexity: Complexity, deep: bool) -> (&'static [usize], &'static [usize]) {
    match (complexity, deep) {
        (Complexity::Simple, false) => (&[3, 64, 160, 160, 32, 16], &[16, 32, 256, 256, 144, 4]),
        (Complexity::Simple, true) => (
            &[3, 64, 160, 160, 160, 32, 16],
            &[16, 32, 256, 512, 256, 144, 4],
        ),
        (Complexity::Complex, false) => (&[3, 64, 160, 160, 16, 16], &[16, 16, 640, 640, 144, 4]),
        (Complexity::Complex, true) => (
            &[3, 64, 160, 160, 160, 16, 16],
            &[16, 16, 640, 1280, 640, 144, 4],
        ),
    }
}

/// `(out_channels, kernel, stride, padding)` per encoder layer, and decoder
/// channel list.
type ImageStack = (&'static [(usize, usize, usize, usize)], &'static [usize]);

fn image_stack(preset: Preset) -> ImageStack {
    match preset {
        Preset::Image64Stride2 => (
            &[
                (64, 5, 2, 2),
                (160, 5, 2, 2),
                (320, 5, 2, 2),
                (160, 5, 2, 2),
                (16, 4, 2, 1),
                (16, 2, 1, 0),
            ],
            &[16, 16, 640, 1280, 640, 144, 4],
        ),
        Preset::Image128Stride2 => (
            &[
                (64, 5, 2, 2),
                (320, 5, 2, 2),
                (640, 5, 2, 2),
                (640, 5, 2, 2),
                (320, 5, 2, 2),
                (16, 4, 2, 1),
                (16, 2, 1, 0),
            ],
            &[16, 16, 320, 640, 1280, 640, 144, 4],
        ),
        Preset::VideoStride3 => unreachable!("video preset has no fixed stack"),
    }
}

pub fn plan_architecture(
    height: usize,
    width: usize,
    complexity: Complexity,
    preset: Preset,
) -> Result<ArchitectureSpec> {
    plan_architecture_with(height, width, complexity, preset, PlanOptions::default())
}

pub fn plan_architecture_with(
    height: usize,
    width: usize,
    complexity: Complexity,
    preset: Preset,
    options: PlanOptions,
) -> Result<ArchitectureSpec> {
    let unsupported = || Error::UnsupportedSize {
        height,
        width,
        preset: preset.name(),
    };
    if height == 0 || width == 0 {
        return Err(unsupported());
    }
    // (in, out, kernel, stride, padding) per encoder layer
    let mut layers: Vec<(usize, usize, usize, usize, usize)> = Vec::new();
    let decoder_channels: Vec<usize>;
    match preset {
        Preset::VideoStride3 => {
            let largest = height.max(width);
            let deep = match largest {
                406..=1000 => true,
                200..=405 => false,
                1..=199 if options.allow_small_frames => false,
                _ => return Err(unsupported()),
            };
            let (enc, dec) = video_channels(complexity, deep);
            let (k, st, p) = VIDEO_TAPS;
            layers.extend(enc.windows(2).map(|c| (c[0], c[1], k, st, p)));
            decoder_channels = dec.to_vec();
        }
        Preset::Image64Stride2 | Preset::Image128Stride2 => {
            let side = if preset == Preset::Image64Stride2 {
                64
            } else {
                128
            };
            if (height, width) != (side, side) {
                return Err(unsupported());
            }
            let (enc, dec) = image_stack(preset);
            let mut cin = 3;
            for &(cout, k, st, p) in enc {
                layers.push((cin, cout, k, st, p));
                cin = cout;
            }
            decoder_channels = dec.to_vec();
        }
    }

    let mut encoder = Vec::with_capacity(layers.len());
    let mut size = (height, width);
    for (cin, cout, kernel, stride, padding) in layers {
        let taps = Taps {
            kernel,
            stride,
            padding,
        };
        if size.0 + 2 * padding < kernel || size.1 + 2 * padding < kernel {
            return Err(unsupported());
        }
        let out = (
            conv_output_size(size.0, taps),
            conv_output_size(size.1, taps),
        );
        encoder.push(LayerSpec {
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            padding,
            input_size: size,
            output_size: out,
        });
        size = out;
    }

    let decoder = encoder
        .iter()
        .rev()
        .zip(decoder_channels.windows(2))
        .map(|(e, c)| LayerSpec {
            in_channels: c[0],
            out_channels: c[1],
            kernel: e.kernel,
            stride: e.stride,
            padding: e.padding,
            input_size: e.output_size,
            output_size: e.input_size,
        })
        .collect();

    let spec = ArchitectureSpec {
        preset,
        complexity,
        height,
        width,
        encoder,
        decoder,
        latent_channels: LATENT_CHANNELS,
        norm_groups: NORM_GROUPS,
    };
    spec.validate()?;
    Ok(spec)
}

/// Horizontal and vertical coordinate rasters spanning `[-1, 1]`; a
/// dimension of size one sits at 0.
pub fn positional_grids(height: usize, width: usize) -> (Array2<f32>, Array2<f32>) {
    let coord = |i: usize, n: usize| -> f32 {
        if n <= 1 {
            0.0
        } else {
            (-1.0 + 2.0 * i as f64 / (n - 1) as f64) as f32
        }
    };
    let horizontal = Array2::from_shape_fn((height, width), |(_, j)| coord(j, width));
    let vertical = Array2::from_shape_fn((height, width), |(i, _)| coord(i, height));
    (horizontal, vertical)
}

/// Stacks frames into a `[3, batch, h, w]` activation.
pub fn stack_frames(frames: &[&Frame]) -> Result<Array4<f32>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Shape("empty batch".into()))?;
    let (h, w) = first.dim();
    let mut out = Array4::<f32>::zeros((3, frames.len(), h, w));
    for (b, f) in frames.iter().enumerate() {
        if f.dim() != (h, w) {
            return Err(Error::Shape(format!(
                "batch mixes {:?} and {:?}",
                (h, w),
                f.dim()
            )));
        }
        out.slice_mut(s![.., b, .., ..]).assign(f.pixels());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderBlock {
    conv: Conv2d,
    norm: GroupNorm,
    grid: Array3<f32>,
}

#[derive(Debug, Clone, PartialEq)]
struct DecoderBlock {
    conv: ConvTranspose2d,
    /// `None` on the output layer, which ends in a sigmoid.
    norm: Option<GroupNorm>,
    grid: Array3<f32>,
}

fn grid_for(size: (usize, usize)) -> Array3<f32> {
    let (h, v) = positional_grids(size.0, size.1);
    ndarray::stack(Axis(0), &[h.view(), v.view()]).expect("same shape")
}

/// Appends the two positional channels to every batch item.
fn with_positional(x: &Array4<f32>, grid: &Array3<f32>) -> Array4<f32> {
    let (_, batch, h, w) = x.dim();
    let pos = grid
        .view()
        .insert_axis(Axis(1))
        .broadcast((POSITIONAL_CHANNELS, batch, h, w))
        .expect("grid matches layer input")
        .to_owned();
    concatenate(Axis(0), &[x.view(), pos.view()]).expect("channel concat")
}

fn strip_positional(dx: Array4<f32>) -> Array4<f32> {
    let c = dx.dim().0 - POSITIONAL_CHANNELS;
    dx.slice(s![..c, .., .., ..]).to_owned()
}

/// Intermediate values kept by [`Autoencoder::forward_train`].
pub struct Tape {
    encoder: Vec<BlockTape>,
    decoder: Vec<BlockTape>,
    output: Array4<f32>,
}

struct BlockTape {
    input: Array4<f32>,
    norm: Option<GroupNormCache>,
    activation: Array4<f32>,
}

impl Tape {
    /// `[4, batch, h, w]` sigmoid output.
    pub fn output(&self) -> &Array4<f32> {
        &self.output
    }
}

/// Per-parameter gradients in [`Autoencoder::parameters_mut`] order.
#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<Vec<f32>>);

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub backgrounds: Vec<Frame>,
    pub noise: Vec<Array2<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    spec: ArchitectureSpec,
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
}

impl Autoencoder {
    /// Builds the network with parameters drawn deterministically from `seed`.
    pub fn new(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = spec
            .encoder
            .iter()
            .map(|l| EncoderBlock {
                conv: Conv2d::new(
                    l.in_channels + POSITIONAL_CHANNELS,
                    l.out_channels,
                    l.taps(),
                    &mut rng,
                ),
                norm: GroupNorm::new(
                    l.out_channels,
                    spec.groups_for(l.out_channels, l.output_size),
                ),
                grid: grid_for(l.input_size),
            })
            .collect();
        let depth = spec.decoder.len();
        let decoder = spec
            .decoder
            .iter()
            .enumerate()
            .map(|(i, l)| DecoderBlock {
                conv: ConvTranspose2d::new(
                    l.in_channels + POSITIONAL_CHANNELS,
                    l.out_channels,
                    l.taps(),
                    l.output_size,
                    &mut rng,
                ),
                norm: (i + 1 < depth).then(|| {
                    GroupNorm::new(
                        l.out_channels,
                        spec.groups_for(l.out_channels, l.output_size),
                    )
                }),
                grid: grid_for(l.input_size),
            })
            .collect();
        Ok(Autoencoder {
            spec,
            encoder,
            decoder,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Flat parameter slices in a fixed order: per layer, convolution weight,
    /// convolution bias, then normalization scale and shift when present.
    pub fn parameters(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for b in &self.encoder {
            out.push(b.conv.weight.as_slice().expect("contiguous"));
            out.push(b.conv.bias.as_slice().expect("contiguous"));
            out.push(b.norm.gamma.as_slice().expect("contiguous"));
            out.push(b.norm.beta.as_slice().expect("contiguous"));
        }
        for b in &self.decoder {
            out.push(b.conv.weight.as_slice().expect("contiguous"));
            out.push(b.conv.bias.as_slice().expect("contiguous"));
            if let Some(n) = &b.norm {
                out.push(n.gamma.as_slice().expect("contiguous"));
                out.push(n.beta.as_slice().expect("contiguous"));
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for b in &mut self.encoder {
            out.push(b.conv.weight.as_slice_mut().expect("contiguous"));
            out.push(b.conv.bias.as_slice_mut().expect("contiguous"));
            out.push(b.norm.gamma.as_slice_mut().expect("contiguous"));
            out.push(b.norm.beta.as_slice_mut().expect("contiguous"));
        }
        for b in &mut self.decoder {
            out.push(b.conv.weight.as_slice_mut().expect("contiguous"));
            out.push(b.conv.bias.as_slice_mut().expect("contiguous"));
            if let Some(n) = &mut b.norm {
                out.push(n.gamma.as_slice_mut().expect("contiguous"));
                out.push(n.beta.as_slice_mut().expect("contiguous"));
            }
        }
        out
    }

    /// Replaces every parameter; slices must match [`Self::parameters`].
    pub fn load_parameters(&mut self, values: &[Vec<f32>]) -> Result<()> {
        let mut slots = self.parameters_mut();
        if slots.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors, expected {}",
                values.len(),
                slots.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.len() != v.len() {
                return Err(Error::Shape(format!(
                    "parameter tensor of {} values, expected {}",
                    v.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(v);
        }
        Ok(())
    }

    fn check_input(&self, x: &Array4<f32>) -> Result<()> {
        let (c, batch, h, w) = x.dim();
        if c != 3 || batch == 0 || (h, w) != (self.spec.height, self.spec.width) {
            return Err(Error::Shape(format!(
                "model expects [3, B, {}, {}], got {:?}",
                self.spec.height,
                self.spec.width,
                x.dim()
            )));
        }
        Ok(())
    }

    /// Inference on a `[3, batch, h, w]` input; returns `[4, batch, h, w]`.
    pub fn forward_tensor(&self, x: &Array4<f32>) -> Result<Array4<f32>> {
        self.check_input(x)?;
        let mut a = x.to_owned();
        for b in &self.encoder {
            let z = b.conv.forward(&with_positional(&a, &b.grid));
            let (mut u, _) = b.norm.forward(&z);
            celu(&mut u);
            a = u;
        }
        for b in &self.decoder {
            let mut z = b.conv.forward(&with_positional(&a, &b.grid));
            match &b.norm {
                Some(n) => {
                    let (mut u, _) = n.forward(&z);
                    celu(&mut u);
                    a = u;
                }
                None => {
                    sigmoid(&mut z);
                    a = z;
                }
            }
        }
        Ok(a)
    }

    /// Backgrounds (channels 1-3) and noise maps (channel 4) per frame.
    pub fn forward(&self, frames: &[&Frame]) -> Result<Reconstruction> {
        let out = self.forward_tensor(&stack_frames(frames)?)?;
        Ok(split_output(&out))
    }

    pub fn forward_train(&self, x: &Array4<f32>) -> Result<Tape> {
        self.check_input(x)?;
        let mut a = x.to_owned();
        let mut encoder = Vec::with_capacity(self.encoder.len());
        for b in &self.encoder {
            let input = with_positional(&a, &b.grid);
            let z = b.conv.forward(&input);
            let (mut u, cache) = b.norm.forward(&z);
            celu(&mut u);
            a = u.clone();
            encoder.push(BlockTape {
                input,
                norm: Some(cache),
                activation: u,
            });
        }
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for b in &self.decoder {
            let input = with_positional(&a, &b.grid);
            let mut z = b.conv.forward(&input);
            let (act, norm) = match &b.norm {
                Some(n) => {
                    let (mut u, cache) = n.forward(&z);
                    celu(&mut u);
                    (u, Some(cache))
                }
                None => {
                    sigmoid(&mut z);
                    (z, None)
                }
            };
            a = act.clone();
            decoder.push(BlockTape {
                input,
                norm,
                activation: act,
            });
        }
        Ok(Tape {
            encoder,
            decoder,
            output: a,
        })
    }

    /// Backpropagates `d_output` (gradient w.r.t. the sigmoid output).
    pub fn backward(&self, tape: &Tape, d_output: &Array4<f32>) -> Result<Gradients> {
        if d_output.dim() != tape.output.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} vs output {:?}",
                d_output.dim(),
                tape.output.dim()
            )));
        }
        let mut grad = d_output.to_owned();
        let mut dec_grads = Vec::with_capacity(self.decoder.len());
        for (b, t) in self.decoder.iter().zip(&tape.decoder).rev() {
            let mut g = Vec::with_capacity(4);
            let dz = match (&b.norm, &t.norm) {
                (Some(n), Some(cache)) => {
                    celu_backward(&t.activation, &mut grad);
                    let (dz, dgamma, dbeta) = n.backward(cache, &grad);
                    g.push(dgamma.to_vec());
                    g.push(dbeta.to_vec());
                    dz
                }
                _ => {
                    sigmoid_backward(&t.activation, &mut grad);
                    grad
                }
            };
            let (dx, dw, db) = b.conv.backward(&t.input, &dz, true);
            let mut layer = vec![dw.into_raw_vec_and_offset().0, db.to_vec()];
            layer.extend(g);
            dec_grads.push(layer);
            grad = strip_positional(dx.expect("requested"));
        }
        let mut enc_grads = Vec::with_capacity(self.encoder.len());
        for (i, (b, t)) in self.encoder.iter().zip(&tape.encoder).enumerate().rev() {
            celu_backward(&t.activation, &mut grad);
            let cache = t.norm.as_ref().expect("encoder blocks normalize");
            let (dz, dgamma, dbeta) = b.norm.backward(cache, &grad);
            let (dx, dw, db) = b.conv.backward(&t.input, &dz, i > 0);
            enc_grads.push(vec![
                dw.into_raw_vec_and_offset().0,
                db.to_vec(),
                dgamma.to_vec(),
                dbeta.to_vec(),
            ]);
            if let Some(dx) = dx {
                grad = strip_positional(dx);
            }
        }
        let flat = enc_grads
            .into_iter()
            .rev()
            .chain(dec_grads.into_iter().rev())
            .flatten()
            .collect();
        Ok(Gradients(flat))
    }
}

/// Splits a `[4, batch, h, w]` output into backgrounds and noise maps.
pub fn split_output(out: &Array4<f32>) -> Reconstruction {
    let batch = out.dim().1;
    let mut backgrounds = Vec::with_capacity(batch);
    let mut noise = Vec::with_capacity(batch);
    for b in 0..batch {
        let bg = out.slice(s![0..3, b, .., ..]).to_owned();
        backgrounds.push(Frame::from_clamped(bg).expect("sigmoid output is 3-channel"));
        noise.push(out.slice(s![3, b, .., ..]).to_owned());
    }
    Reconstruction { backgrounds, noise }
}
