//! Frame sequences, ground-truth labels and on-disk dataset layouts.
//!
//! Frames are held as `[3, h, w]` rasters of `f32` in `[0, 1]`. Sources with a
//! single channel are replicated to three channels on load.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary foreground mask, `true` for foreground.
pub type Mask = Array2<bool>;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pixels: Array3<f32>,
}

impl Frame {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        if pixels.dim().0 != 3 {
            return Err(Error::Shape(format!(
                "frame must have 3 channels, got {}",
                pixels.dim().0
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Frame { pixels })
    }

    /// Builds a frame by clamping every value into `[0, 1]`.
    pub fn from_clamped(mut pixels: Array3<f32>) -> Result<Self> {
        pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Frame::new(pixels)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        Frame::new(Array3::from_shape_fn((3, height, width), |(c, _, _)| {
            rgb[c]
        }))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = self.dim();
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([
                quantize(self.pixels[[0, y, x]]),
                quantize(self.pixels[[1, y, x]]),
                quantize(self.pixels[[2, y, x]]),
            ])
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let pixels = Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
            f32::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
        });
        Frame { pixels }
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Ordered frames of one video, all sharing the same resolution.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    source_id: String,
    frames: Vec<Frame>,
    indices: Vec<u32>,
}

impl FrameSequence {
    /// Frame numbers default to `1..=N`.
    pub fn new(source_id: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        let indices = (1..=frames.len() as u32).collect();
        FrameSequence::with_indices(source_id, frames, indices)
    }

    pub fn with_indices(
        source_id: impl Into<String>,
        frames: Vec<Frame>,
        indices: Vec<u32>,
    ) -> Result<Self> {
        let source_id = source_id.into();
        let first = frames
            .first()
            .ok_or_else(|| Error::Invalid(format!("sequence {source_id} has no frames")))?;
        let dim = first.dim();
        if let Some(bad) = frames.iter().find(|f| f.dim() != dim) {
            return Err(Error::ResolutionMismatch {
                path: PathBuf::from(&source_id),
                expected: dim,
                found: bad.dim(),
            });
        }
        if indices.len() != frames.len() {
            return Err(Error::Shape(format!(
                "{} frame indices for {} frames",
                indices.len(),
                frames.len()
            )));
        }
        Ok(FrameSequence {
            source_id,
            frames,
            indices,
        })
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    /// Frame numbers as embedded in the source file names.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.frames[0].dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Background,
    Foreground,
    /// Scored by neither class, e.g. shadows or stopped objects.
    Excluded,
    OutOfRoi,
    Unlabeled,
}

impl Label {
    /// Whether the pixel takes part in the confusion counts.
    pub fn is_evaluated(self) -> bool {
        matches!(self, Label::Background | Label::Foreground)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelFrame {
    labels: Array2<Label>,
}

impl LabelFrame {
    pub fn new(labels: Array2<Label>) -> Self {
        LabelFrame { labels }
    }

    pub fn filled(height: usize, width: usize, label: Label) -> Self {
        LabelFrame {
            labels: Array2::from_elem((height, width), label),
        }
    }

    /// Foreground where the mask is set, background elsewhere.
    pub fn from_mask(mask: &Mask) -> Self {
        LabelFrame {
            labels: mask.mapv(|fg| {
                if fg {
                    Label::Foreground
                } else {
                    Label::Background
                }
            }),
        }
    }

    pub fn labels(&self) -> &Array2<Label> {
        &self.labels
    }

    pub fn dim(&self) -> (usize, usize) {
        self.labels.dim()
    }

    pub fn foreground_mask(&self) -> Mask {
        self.labels.mapv(|l| l == Label::Foreground)
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    Cdnet,
    Lasiesta,
    Bmc,
    Generic,
}

impl std::str::FromStr for LayoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cdnet" => Ok(LayoutKind::Cdnet),
            "lasiesta" => Ok(LayoutKind::Lasiesta),
            "bmc" => Ok(LayoutKind::Bmc),
            "generic" => Ok(LayoutKind::Generic),
            other => Err(Error::Config(format!("unknown layout kind `{other}`"))),
        }
    }
}

/// Maps stored ground-truth pixel codes (RGB triples; gray sources are
/// replicated) to labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTable {
    entries: Vec<([u8; 3], Label)>,
}

impl LabelTable {
    pub fn new(entries: Vec<([u8; 3], Label)>) -> Self {
        LabelTable { entries }
    }

    fn gray(entries: &[(u8, Label)]) -> Self {
        LabelTable {
            entries: entries.iter().map(|&(v, l)| ([v, v, v], l)).collect(),
        }
    }

    /// CDnet codes: 0 static, 50 shadow, 85 outside ROI, 170 unknown motion,
    /// 255 motion.
    pub fn cdnet() -> Self {
        LabelTable::gray(&[
            (0, Label::Background),
            (50, Label::Excluded),
            (85, Label::OutOfRoi),
            (170, Label::Unlabeled),
            (255, Label::Foreground),
        ])
    }

    /// LASIESTA colour codes: black background, red/green/yellow moving
    /// objects, white stopped objects, gray uncertain borders.
    pub fn lasiesta() -> Self {
        LabelTable::new(vec![
            ([0, 0, 0], Label::Background),
            ([255, 0, 0], Label::Foreground),
            ([0, 255, 0], Label::Foreground),
            ([255, 255, 0], Label::Foreground),
            ([255, 255, 255], Label::Excluded),
            ([128, 128, 128], Label::Excluded),
        ])
    }

    pub fn binary() -> Self {
        LabelTable::gray(&[(0, Label::Background), (255, Label::Foreground)])
    }

    pub fn for_kind(kind: LayoutKind) -> Self {
        match kind {
            LayoutKind::Cdnet | LayoutKind::Generic => LabelTable::cdnet(),
            LayoutKind::Lasiesta => LabelTable::lasiesta(),
            LayoutKind::Bmc => LabelTable::binary(),
        }
    }

    pub fn decode(&self, code: [u8; 3]) -> Option<Label> {
        self.entries
            .iter()
            .find(|(c, _)| *c == code)
            .map(|&(_, l)| l)
    }

    /// First stored code for a label, used when writing ground truth.
    pub fn encode(&self, label: Label) -> Option<[u8; 3]> {
        self.entries
            .iter()
            .find(|(_, l)| *l == label)
            .map(|&(c, _)| c)
    }

    pub fn entries(&self) -> &[([u8; 3], Label)] {
        &self.entries
    }
}

/// Where a dataset keeps its frames and ground truth. Directory and file
/// templates are relative to `root` and substitute `{seq}` with the sequence
/// name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetLayout {
    pub kind: LayoutKind,
    pub root: PathBuf,
    pub input_dir: String,
    pub groundtruth_dir: String,
    pub labels: LabelTable,
    pub roi_file: Option<String>,
    pub temporal_roi_file: Option<String>,
    /// Inclusive frame-number range; overrides `temporal_roi_file`.
    pub temporal_roi: Option<(u32, u32)>,
}

impl DatasetLayout {
    pub fn new(kind: LayoutKind, root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let labels = LabelTable::for_kind(kind);
        match kind {
            LayoutKind::Cdnet => DatasetLayout {
                kind,
                root,
                input_dir: "{seq}/input".into(),
                groundtruth_dir: "{seq}/groundtruth".into(),
                labels,
                roi_file: Some("{seq}/ROI.bmp".into()),
                temporal_roi_file: Some("{seq}/temporalROI.txt".into()),
                temporal_roi: None,
            },
            LayoutKind::Lasiesta => DatasetLayout {
                kind,
                root,
                input_dir: "{seq}".into(),
                groundtruth_dir: "{seq}-GT".into(),
                labels,
                roi_file: None,
                temporal_roi_file: None,
                temporal_roi: None,
            },
            LayoutKind::Bmc | LayoutKind::Generic => DatasetLayout {
                kind,
                root,
                input_dir: "{seq}/input".into(),
                groundtruth_dir: "{seq}/groundtruth".into(),
                labels,
                roi_file: Some("{seq}/ROI.png".into()),
                temporal_roi_file: Some("{seq}/temporalROI.txt".into()),
                temporal_roi: None,
            },
        }
    }

    fn resolve(&self, template: &str, sequence: &str) -> PathBuf {
        self.root.join(template.replace("{seq}", sequence))
    }

    pub fn input_path(&self, sequence: &str) -> PathBuf {
        self.resolve(&self.input_dir, sequence)
    }

    pub fn groundtruth_path(&self, sequence: &str) -> PathBuf {
        self.resolve(&self.groundtruth_dir, sequence)
    }

    pub fn has_groundtruth(&self, sequence: &str) -> bool {
        self.groundtruth_path(sequence).is_dir()
    }

    /// Inclusive frame-number range scored during evaluation, if restricted.
    pub fn temporal_roi(&self, sequence: &str) -> Result<Option<(u32, u32)>> {
        if let Some(range) = self.temporal_roi {
            return Ok(Some(range));
        }
        let Some(template) = &self.temporal_roi_file else {
            return Ok(None);
        };
        let path = self.resolve(template, sequence);
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let nums: Vec<u32> = text
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        match nums.as_slice() {
            [start, end] if start <= end => Ok(Some((*start, *end))),
            _ => Err(Error::Config(format!(
                "{}: expected `start end`",
                path.display()
            ))),
        }
    }

    /// Spatial ROI; `true` marks evaluated pixels.
    pub fn roi_mask(&self, sequence: &str) -> Result<Option<Mask>> {
        let Some(template) = &self.roi_file else {
            return Ok(None);
        };
        let path = self.resolve(template, sequence);
        if !path.is_file() {
            return Ok(None);
        }
        let img = open_rgb(&path)?;
        let (w, h) = img.dimensions();
        Ok(Some(Array2::from_shape_fn(
            (h as usize, w as usize),
            |(y, x)| img.get_pixel(x as u32, y as u32).0.iter().any(|&v| v > 0),
        )))
    }
}

/// An image file together with the frame number parsed from its name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedFile {
    pub index: u32,
    pub path: PathBuf,
}

/// Lists image files sorted by the last integer embedded in each file stem.
pub fn list_indexed_images(dir: &Path) -> Result<Vec<IndexedFile>> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !is_image || !path.is_file() {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let index = frame_number(stem).ok_or_else(|| {
            Error::Invalid(format!("no frame number in file name {}", path.display()))
        })?;
        files.push(IndexedFile { index, path });
    }
    files.sort_by(|a, b| a.index.cmp(&b.index).then_with(|| a.path.cmp(&b.path)));
    Ok(files)
}

/// Last run of ASCII digits in `stem`.
fn frame_number(stem: &str) -> Option<u32> {
    let bytes = stem.as_bytes();
    let end = bytes.iter().rposition(u8::is_ascii_digit)? + 1;
    let start = bytes[..end]
        .iter()
        .rposition(|b| !b.is_ascii_digit())
        .map_or(0, |p| p + 1);
    stem[start..end].parse().ok()
}

fn open_rgb(path: &Path) -> Result<RgbImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::image(path, e))?;
    Ok(img.to_rgb8())
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    Ok(Frame::from_rgb8(&open_rgb(path)?))
}

pub fn load_sequence(layout: &DatasetLayout, sequence: &str) -> Result<FrameSequence> {
    let dir = layout.input_path(sequence);
    let files = list_indexed_images(&dir)?;
    if files.is_empty() {
        return Err(Error::EmptySequence(dir));
    }
    let mut frames = Vec::with_capacity(files.len());
    let mut expected = None;
    for file in &files {
        let frame = read_frame(&file.path)?;
        match expected {
            None => expected = Some(frame.dim()),
            Some(dim) if dim != frame.dim() => {
                return Err(Error::ResolutionMismatch {
                    path: file.path.clone(),
                    expected: dim,
                    found: frame.dim(),
                })
            }
            Some(_) => {}
        }
        frames.push(frame);
    }
    let indices = files.iter().map(|f| f.index).collect();
    FrameSequence::with_indices(sequence, frames, indices)
}

pub fn decode_labels(path: &Path, table: &LabelTable) -> Result<LabelFrame> {
    let img = open_rgb(path)?;
    let (w, h) = img.dimensions();
    let mut labels = Array2::from_elem((h as usize, w as usize), Label::Background);
    for (x, y, px) in img.enumerate_pixels() {
        let label = table.decode(px.0).ok_or_else(|| Error::UnknownLabelCode {
            path: path.to_path_buf(),
            code: px.0,
        })?;
        labels[[y as usize, x as usize]] = label;
    }
    Ok(LabelFrame::new(labels))
}

/// Ground truth aligned with the frames `load_sequence` returns. Frames outside
/// the temporal ROI are fully unlabeled; pixels outside the spatial ROI are
/// marked out-of-ROI.
pub fn load_groundtruth(layout: &DatasetLayout, sequence: &str) -> Result<Vec<LabelFrame>> {
    let inputs = list_indexed_images(&layout.input_path(sequence))?;
    let first = inputs
        .first()
        .ok_or_else(|| Error::EmptySequence(layout.input_path(sequence)))?;
    let (w, h) = image::image_dimensions(&first.path).map_err(|e| Error::image(&first.path, e))?;
    let (h, w) = (h as usize, w as usize);

    let gt_files = list_indexed_images(&layout.groundtruth_path(sequence))?;
    let temporal = layout.temporal_roi(sequence)?;
    let roi = layout.roi_mask(sequence)?;
    if let Some(roi) = &roi {
        if roi.dim() != (h, w) {
            return Err(Error::Shape(format!(
                "ROI mask is {:?}, frames are {:?}",
                roi.dim(),
                (h, w)
            )));
        }
    }

    let mut out = Vec::with_capacity(inputs.len());
    for input in &inputs {
        let in_range = temporal.is_none_or(|(a, b)| (a..=b).contains(&input.index));
        if !in_range {
            out.push(LabelFrame::filled(h, w, Label::Unlabeled));
            continue;
        }
        let gt = gt_files
            .binary_search_by_key(&input.index, |f| f.index)
            .map(|i| &gt_files[i])
            .map_err(|_| Error::MissingGroundTruth {
                sequence: sequence.to_string(),
                index: input.index,
            })?;
        let mut frame = decode_labels(&gt.path, &layout.labels)?;
        if frame.dim() != (h, w) {
            return Err(Error::ResolutionMismatch {
                path: gt.path.clone(),
                expected: (h, w),
                found: frame.dim(),
            });
        }
        if let Some(roi) = &roi {
            ndarray::Zip::from(&mut frame.labels)
                .and(roi)
                .for_each(|l, &inside| {
                    if !inside {
                        *l = Label::OutOfRoi;
                    }
                });
        }
        out.push(frame);
    }
    Ok(out)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

/// Writes an 8-bit single-channel PNG with foreground 255 and background 0.
pub fn write_mask(mask: &Mask, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[[y as usize, x as usize]] {
            255
        } else {
            0
        }])
    });
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

/// Reads a mask image; any channel value of 128 or more is foreground.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = open_rgb(path)?;
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)
            .0
            .iter()
            .any(|&v| v >= 128)
    }))
}

pub fn write_frame(frame: &Frame, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    frame
        .to_rgb8()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

/// Writes a single-channel raster scaled by 255 and clamped to 8 bits.
pub fn write_gray(values: &Array2<f32>, path: &Path) -> Result<()> {
    let (h, w) = values.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([quantize(values[[y as usize, x as usize]])])
    });
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

/// Portable float map (`Pf`, little-endian, rows bottom to top).
pub fn write_pfm(values: &Array2<f32>, path: &Path) -> Result<()> {
    let (h, w) = values.dim();
    let mut buf = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    buf.reserve(h * w * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            buf.extend_from_slice(&values[[y, x]].to_le_bytes());
        }
    }
    ensure_parent(path)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn write_labels(labels: &LabelFrame, table: &LabelTable, path: &Path) -> Result<()> {
    let (h, w) = labels.dim();
    let mut img = RgbImage::new(w as u32, h as u32);
    for ((y, x), &label) in labels.labels().indexed_iter() {
        let code = table
            .encode(label)
            .ok_or_else(|| Error::Config(format!("label table has no code for {label:?}")))?;
        img.put_pixel(x as u32, y as u32, Rgb(code));
    }
    ensure_parent(path)?;
    let gray = code_is_gray(table);
    let result = if gray {
        image::DynamicImage::ImageRgb8(img)
            .to_luma8()
            .save_with_format(path, image::ImageFormat::Png)
    } else {
        img.save_with_format(path, image::ImageFormat::Png)
    };
    result.map_err(|e| Error::image(path, e))
}

fn code_is_gray(table: &LabelTable) -> bool {
    table
        .entries()
        .iter()
        .all(|(c, _)| c[0] == c[1] && c[1] == c[2])
}

/// Materializes a sequence in the generic layout:
/// `<root>/<name>/input/in%06d.png` and, when given,
/// `<root>/<name>/groundtruth/gt%06d.png`.
pub fn write_generic_sequence(
    root: &Path,
    name: &str,
    seq: &FrameSequence,
    labels: Option<&[LabelFrame]>,
) -> Result<()> {
    let layout = DatasetLayout::new(LayoutKind::Generic, root);
    let input = layout.input_path(name);
    for (frame, index) in seq.frames().iter().zip(seq.indices()) {
        write_frame(frame, &input.join(format!("in{index:06}.png")))?;
    }
    if let Some(labels) = labels {
        if labels.len() != seq.len() {
            return Err(Error::Shape(format!(
                "{} label frames for {} frames",
                labels.len(),
                seq.len()
            )));
        }
        let gt = layout.groundtruth_path(name);
        for (label, index) in labels.iter().zip(seq.indices()) {
            write_labels(label, &layout.labels, &gt.join(format!("gt{index:06}.png")))?;
        }
    }
    Ok(())
}

/// `count` frame positions evenly spaced over `0..total`; all positions when
/// `total <= count`.
pub fn sample_indices(total: usize, count: usize) -> Vec<usize> {
    if total <= count {
        return (0..total).collect();
    }
    (0..count).map(|i| i * total / count).collect()
}
