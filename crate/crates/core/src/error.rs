use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file name {0:?} does not end in `_<digits>`")]
    MalformedName(String),

    #[error("no usable images found in {0}")]
    EmptyCorpus(PathBuf),

    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),

    #[error("writer {writer:?} has {count} documents, at least {required} are needed")]
    InsufficientSamples {
        writer: String,
        count: usize,
        required: usize,
    },

    #[error("histogram has no nonzero bin")]
    EmptyHistogram,

    #[error("mask for {doc_id:?} is {mask:?}, image is {image:?}")]
    MaskDimensionMismatch {
        doc_id: String,
        mask: (u32, u32),
        image: (u32, u32),
    },

    #[error("unknown method {0:?}")]
    UnknownMethod(String),

    #[error("image is {width}x{height} after downsampling, at least 16x16 is required")]
    ImageTooSmall { width: u32, height: u32 },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("vector dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),

    #[error("need at least {required} samples, got {actual}")]
    InsufficientSample { required: usize, actual: usize },

    #[error("model not fitted: {0}")]
    NotFitted(String),

    #[error("k-means needs at least k={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("all covariance eigenvalues are below {eps}")]
    RankDeficient { eps: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in input")]
    NonFiniteInput,

    #[error("generalized max pooling needs at least one embedding")]
    EmptySetForGmp,

    #[error("{actual} pooled descriptors, at least {required} are needed")]
    InsufficientDescriptors { required: usize, actual: usize },

    #[error("document {0:?} has no descriptors")]
    EmptyDescriptorSet(String),

    #[error("need at least 2 documents, got {0}")]
    TooFewDocuments(usize),

    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("training set has a single class")]
    SingleClass,

    #[error("classifier has no trained writers")]
    NotTrained,

    #[error("no prediction for test document {0:?}")]
    MissingPrediction(String),

    #[error("unknown document {0:?}")]
    UnknownDocument(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures inside the numerical kernels rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_numerical(),
            Error::RankDeficient { .. } | Error::NonFiniteInput => true,
            _ => false,
        }
    }
}
