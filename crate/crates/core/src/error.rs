use std::path::PathBuf;

/// Errors produced anywhere in the calibration pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("cheirality violation: point has non-positive depth {depth}")]
    Cheirality { depth: f64 },

    #[error("low parallax: ray angle {angle_deg:.4} deg below {min_deg} deg")]
    LowParallax { angle_deg: f64, min_deg: f64 },

    #[error("numerical failure: {message} (last residual {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("singular system: rank deficiency in {block}")]
    Singular { block: String },

    #[error("ray does not intersect plane: {0}")]
    NoIntersection(String),

    #[error("intersection behind camera (t = {t})")]
    BehindCamera { t: f64 },

    #[error("pixel {which} failed: {source}")]
    Pixel {
        which: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("rotation-only pair: median triangulation angle {median_deg:.4} deg")]
    RotationOnly { median_deg: f64 },

    #[error("localization failed: {0}")]
    LocalizationFailed(String),

    #[error("reconstruction failed at stage `{stage}`: {message}")]
    ReconstructionFailed { stage: String, message: String },

    #[error("track unusable: {0}")]
    TrackUnusable(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("unsupported format_version {found} in {path} (this build reads version {supported}; re-export the file with a matching pancal release)")]
    FormatVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
