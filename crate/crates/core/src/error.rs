use std::path::PathBuf;

use thiserror::Error;

/// Every failure the stitching engine can report.
///
/// Variants map one-to-one onto the failure modes of the individual stages so
/// that the pipeline can decide which ones degrade gracefully and which ones
/// abort a run.
#[derive(Debug, Error)]
pub enum StitchError {
    #[error("region {0} contains no valid pixels")]
    EmptyRegion(String),
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("normal matrix is rank deficient (smallest/largest singular value {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("region {width}x{height} is smaller than the required {min}x{min}")]
    RegionTooSmall { width: usize, height: usize, min: usize },
    #[error("need at least 2 matches, got {0}")]
    InsufficientMatches(usize),
    #[error("no consensus: {inliers} inliers out of {total} matches")]
    NoConsensus { inliers: usize, total: usize },
    #[error("camera pose is degenerate for the world plane (|det| = {0:e})")]
    DegeneratePose(f64),
    #[error("homography is singular (|det| = {0:e})")]
    SingularHomography(f64),
    #[error("no canvas pixel maps inside the source frame")]
    EmptyProjection,
    #[error("warped views do not overlap")]
    NoOverlap,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing temporal state: {0}")]
    MissingState(&'static str),
    #[error("input is smaller than the required {0}x{0} window")]
    TooSmall(usize),
    #[error("inputs do not describe the same run: {0}")]
    InputMismatch(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("decode error in {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl StitchError {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        StitchError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors that stem from a bad configuration rather than from the
    /// data or the environment. The CLI maps these to exit code 1.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            StitchError::Config { .. } | StitchError::NoOverlap | StitchError::InputMismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, StitchError>;
