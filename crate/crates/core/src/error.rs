use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid ray: {0}")]
    InvalidRay(String),
    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("frame {frame} out of range for field with {frame_count} frames")]
    FrameOutOfRange { frame: usize, frame_count: usize },
    #[error("length mismatch in {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("value {value} outside domain of {what}")]
    Domain { what: &'static str, value: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite loss component `{component}`")]
    NonFiniteLoss { component: &'static str },
    #[error("missing forward cache: {0}")]
    MissingCache(&'static str),
    #[error("non-finite function value at evaluation point in {0}")]
    NonFinite(String),
    #[error("malformed {format} data in {path}: {reason}")]
    Format {
        format: &'static str,
        path: PathBuf,
        reason: String,
    },
    #[error("missing {what} for frame {frame}: {path}")]
    MissingFrameFile {
        what: &'static str,
        frame: usize,
        path: PathBuf,
    },
    #[error("training aborted at iteration {iteration}: {source}")]
    TrainingAborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        format: &'static str,
        path: impl Into<PathBuf>,
        reason: impl Into<String>,
    ) -> Self {
        Error::Format {
            format,
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { what, left, right });
    }
    Ok(())
}
