use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("directory not found: {0}")]
    MissingDirectory(PathBuf),

    #[error("no decodable frames in {0}")]
    EmptySequence(PathBuf),

    #[error("inconsistent resolution in {path}: expected {expected:?}, found {found:?}")]
    ResolutionMismatch {
        path: PathBuf,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("unknown ground-truth code {code:?} in {path}")]
    UnknownLabelCode { path: PathBuf, code: [u8; 3] },

    #[error("missing ground truth for frame {index} of {sequence}")]
    MissingGroundTruth { sequence: String, index: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("image size {height}x{width} is outside the range supported by preset {preset}")]
    UnsupportedSize {
        height: usize,
        width: usize,
        preset: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
