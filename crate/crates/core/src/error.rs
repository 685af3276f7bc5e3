use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("no physically plausible solution: {0}")]
    NoPhysicalSolution(String),

    #[error("degenerate motion: {0}")]
    DegenerateMotion(String),

    #[error("epipole coincides with the transferred point (separation {separation:e} px)")]
    EpipoleCoincidesWithPoint { separation: f64 },

    #[error("image size mismatch: {expected:?} vs {actual:?}")]
    SizeMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("mask mismatch: {0}")]
    MaskMismatch(String),

    #[error("insufficient training data: {0}")]
    InsufficientData(String),

    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty ground truth: {0}")]
    EmptyGroundTruth(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed row at {}:{line}: {message}", .path.display())]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("insufficient motion: no earlier frame is more than {threshold_m} m away from frame {frame}")]
    InsufficientMotion { frame: usize, threshold_m: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    PngEncode(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::Image(_) | Error::PngEncode(_)
        )
    }
}
