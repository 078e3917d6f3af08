use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("kernel is not symmetric: entries ({i}, {j}) and ({j}, {i}) differ")]
    NotSymmetric { i: usize, j: usize },

    #[error("kernel is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e} is below -{tolerance:e}")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("invalid subset: {0}")]
    InvalidSubset(String),

    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),

    #[error("segment {segment} has a zero mean feature vector")]
    ZeroMeanSegment { segment: usize },

    #[error("frame {frame} has norm {norm}, expected a unit vector")]
    NotUnitNorm { frame: usize, norm: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("exhaustive MAP is limited to {max} items, kernel has {n}")]
    TooLarge { n: usize, max: usize },

    #[error("cholesky factorization of {0} failed after diagonal jitter")]
    Factorization(&'static str),

    #[error("conditioning set has zero probability (singular principal minor)")]
    SingularConditioning,

    #[error("no exemplars available{}", category.as_ref().map(|c| format!(" for category {c:?}")).unwrap_or_default())]
    NoExemplars { category: Option<String> },

    #[error("category label required in {0} category mode")]
    MissingCategory(&'static str),

    #[error("ground-truth summary of exemplar {exemplar:?} has zero probability under its transferred kernel")]
    DegenerateLikelihood { exemplar: String },

    #[error("video {video:?}: {message}")]
    Video { video: String, message: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures caused by numerics rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPsd { .. }
                | Error::Factorization(_)
                | Error::SingularConditioning
                | Error::DegenerateLikelihood { .. }
                | Error::ZeroMeanSegment { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn video(video: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Video {
            video: video.into(),
            message: message.into(),
        }
    }
}
