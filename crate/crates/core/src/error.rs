use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("ground truth person {detection} in frame {frame} is missing `{field}`")]
    MissingGroundTruthField { frame: u64, detection: usize, field: &'static str },

    #[error("pose has no present joints")]
    NoPresentJoints,

    #[error("detection {detection} in frame {frame} has no `feature` vector (required by the {criterion} criterion)")]
    MissingFeature { frame: u64, detection: usize, criterion: &'static str },

    #[error("feature dimension mismatch: {left} vs {right}")]
    FeatureDimension { left: usize, right: usize },

    #[error("external criterion selected but no score table was supplied")]
    MissingExternalScores,

    #[error("external criterion needs frame/index context for each edge")]
    MissingEdgeContext,

    #[error("degenerate head box (zero diagonal)")]
    DegenerateHeadBox,

    #[error("prediction in frame {frame} (detection {detection}) has no track_id")]
    MissingTrackId { frame: u64, detection: usize },

    #[error("video id mismatch: ground truth `{gt}` vs prediction `{pred}`")]
    VideoMismatch { gt: String, pred: String },

    #[error("joint count mismatch: expected {expected}, found {found}")]
    JointCount { expected: usize, found: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
