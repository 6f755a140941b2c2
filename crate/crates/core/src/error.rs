use thiserror::Error;

/// Errors raised by the pixel-level types and algorithms.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("buffer length {actual} does not match {width}x{height}")]
    BufferLength { width: usize, height: usize, actual: usize },
    #[error("probability value {value} at index {index} is outside [0, 1]")]
    ProbabilityRange { index: usize, value: f64 },
    #[error("click ({u}, {v}) is outside the {width}x{height} image")]
    ClickOutOfBounds {
        u: usize,
        v: usize,
        width: usize,
        height: usize,
    },
    #[error("duplicate click at ({u}, {v})")]
    DuplicateClick { u: usize, v: usize },
    #[error("malformed click list: {0}")]
    ClickSyntax(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad format: {0}")]
    Format(String),
    #[error("the session has no clicks yet")]
    NoClicks,
    #[error("ground truth mask has no foreground pixels")]
    EmptyGroundTruth,
    #[error(transparent)]
    Segmenter(#[from] crate::segmenter::SegmenterError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
